#pragma once

#include <array>
#include <string>
#include <vector>

#include "nlicheck/corpus.hpp"
#include "nlicheck/data.hpp"
#include "nlicheck/model.hpp"

namespace nli {

struct RegulationClause {
    std::string id;       // e.g. "gdpr-art7-3"
    std::string source;   // citation text
    std::string text;     // the premise
    std::vector<std::vector<std::string>> patterns;  // AND within, OR across
};

// JSON array of {"id", "source", "text", "patterns": [[str]]}.
std::vector<RegulationClause> load_clauses(const std::string& path);

// Flattens clause patterns into corpus search patterns with ids
// "<clause_id>#<k>".
std::vector<KeywordPattern> clause_patterns(const std::vector<RegulationClause>& clauses);

enum class Verdict { potential_violation, supported, inconclusive };

std::string verdict_name(Verdict v);

// probs in class order [contradiction, neutral, entailment].
Verdict verdict(const std::array<double, 3>& probs, double threshold = 0.5);

struct Finding {
    std::string app_id;
    std::string clause_id;
    std::size_t sentence_index = 0;
    std::string sentence;
    std::array<double, 3> probs{};
    Verdict verdict = Verdict::inconclusive;
    std::string model_id;
};

// One finding per (clause, sentence) pair where the sentence matched any of
// that clause's patterns. Premise = clause text, hypothesis = sentence.
std::vector<Finding> pair_and_predict(const std::vector<RegulationClause>& clauses,
                                      const std::vector<PolicyDocument>& corpus,
                                      Model<float>& model, const Vocabulary& vocab,
                                      const std::string& model_id,
                                      double threshold = 0.5);

struct Report {
    std::int64_t timestamp = 0;  // honors SOURCE_DATE_EPOCH
    std::string model_id;
    std::string clause_file_hash;
    std::vector<Finding> findings;  // sorted by contradiction prob descending
    std::size_t violations = 0;
    std::size_t supported = 0;
    std::size_t inconclusive = 0;
};

Report make_report(std::vector<Finding> findings, const std::string& model_id,
                   const std::string& clause_file_hash);

// jsonl: one header line then one finding per line. text: human-readable,
// grouped by app then clause.
std::string render_report_jsonl(const Report& report);
std::string render_report_text(const Report& report);

std::string file_content_hash(const std::string& path);

}  // namespace nli
