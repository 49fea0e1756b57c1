#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nli {

struct PolicyManifestEntry {
    std::string app_id;
    std::string policy_url;
};

struct ManifestLoadResult {
    std::vector<PolicyManifestEntry> entries;
    std::size_t skipped_invalid = 0;
};

// JSON array of {"app_id": str, "policy_url": str}; entries with invalid
// (non-absolute) URLs are skipped and counted.
ManifestLoadResult load_manifest(const std::string& path);

struct FetchSettings {
    double timeout_seconds = 20.0;
    int retries = 2;                  // exponential backoff
    double per_host_delay_seconds = 1.0;
    std::size_t max_body_bytes = 5 * 1024 * 1024;
    int max_redirects = 5;
    std::string user_agent = "nlicheck-policy-crawler/1.0 (+compliance research)";
};

struct FetchOutcome {
    bool ok = false;
    int status = 0;
    std::string final_url;
    std::string body;
    std::string error;  // set when !ok
};

FetchOutcome fetch_policy(const PolicyManifestEntry& entry,
                          const FetchSettings& settings);

// script/style/head removed, tags stripped, block-level tags break lines,
// entities decoded, whitespace collapsed.
std::string extract_text(const std::string& html);

struct Sentence {
    std::size_t index = 0;
    std::string text;
    std::size_t offset = 0;  // start position in the extracted text
};

std::vector<Sentence> segment_sentences(const std::string& text);

struct KeywordPattern {
    std::string id;
    std::vector<std::string> terms;  // lowercase; a sentence matches when it
                                     // contains ALL terms (token-boundary)
};

struct SentenceRecord {
    std::size_t index = 0;
    std::string text;
    std::size_t offset = 0;
    std::vector<std::string> matched_patterns;
};

std::vector<SentenceRecord> search_sensitive(const std::vector<Sentence>& sentences,
                                             const std::vector<KeywordPattern>& patterns);

struct PolicyDocument {
    std::string app_id;
    std::string source_url;
    std::string final_url;
    std::int64_t fetch_unix_time = 0;
    std::string raw_html;
    std::string text;
    std::vector<SentenceRecord> sentences;
};

struct IngestReport {
    std::size_t manifest_entries = 0;
    std::size_t fetched = 0;
    std::size_t failed = 0;
    std::vector<std::string> failures;  // "app_id: error"
};

// Fetches every manifest entry (failures never abort the batch) and writes
// one directory per app_id under out_dir: raw.html, text.txt,
// sentences.jsonl. jobs caps fetch concurrency; requests to the same host
// are serialized with the per-host delay.
IngestReport ingest(const std::vector<PolicyManifestEntry>& entries,
                    const std::vector<KeywordPattern>& patterns,
                    const std::string& out_dir, const FetchSettings& settings,
                    std::size_t jobs = 8);

// Reads a stored corpus back (directories written by ingest).
std::vector<PolicyDocument> load_corpus(const std::string& dir);

// Re-runs search over a stored corpus and rewrites sentences.jsonl.
void search_corpus(const std::string& dir, const std::vector<KeywordPattern>& patterns);

}  // namespace nli
