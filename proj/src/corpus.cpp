#include "nlicheck/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "nlicheck/data.hpp"
#include "nlicheck/errors.hpp"

namespace nli {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

namespace {

struct ParsedUrl {
    std::string scheme;
    std::string host;
    int port = 0;
    std::string path;  // includes query
    std::string origin() const {
        return scheme + "://" + host + (port ? ":" + std::to_string(port) : "");
    }
};

std::optional<ParsedUrl> parse_url(const std::string& url) {
    ParsedUrl u;
    std::size_t pos;
    if (url.rfind("http://", 0) == 0) {
        u.scheme = "http";
        pos = 7;
    } else if (url.rfind("https://", 0) == 0) {
        u.scheme = "https";
        pos = 8;
    } else {
        return std::nullopt;
    }
    const std::size_t slash = url.find('/', pos);
    std::string hostport =
        slash == std::string::npos ? url.substr(pos) : url.substr(pos, slash - pos);
    u.path = slash == std::string::npos ? "/" : url.substr(slash);
    const std::size_t colon = hostport.rfind(':');
    if (colon != std::string::npos) {
        u.host = hostport.substr(0, colon);
        u.port = std::atoi(hostport.c_str() + colon + 1);
    } else {
        u.host = hostport;
    }
    if (u.host.empty()) return std::nullopt;
    return u;
}

}  // namespace

ManifestLoadResult load_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open manifest " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw FormatError(path + ": unparseable manifest: " + e.what());
    }
    if (!j.is_array()) throw FormatError(path + ": manifest must be a JSON array");
    ManifestLoadResult out;
    for (const auto& item : j) {
        PolicyManifestEntry e;
        try {
            e.app_id = item.at("app_id").get<std::string>();
            e.policy_url = item.at("policy_url").get<std::string>();
        } catch (const json::exception&) {
            ++out.skipped_invalid;
            continue;
        }
        if (!parse_url(e.policy_url)) {
            std::cerr << "warning: skipping entry '" << e.app_id
                      << "' with invalid url '" << e.policy_url << "'\n";
            ++out.skipped_invalid;
            continue;
        }
        out.entries.push_back(std::move(e));
    }
    return out;
}

// ---------------------------------------------------------------------------
// fetch
// ---------------------------------------------------------------------------

FetchOutcome fetch_policy(const PolicyManifestEntry& entry,
                          const FetchSettings& settings) {
    FetchOutcome out;
    std::string url = entry.policy_url;
    for (int redirect = 0; redirect <= settings.max_redirects; ++redirect) {
        auto parsed = parse_url(url);
        if (!parsed) {
            out.error = "invalid url: " + url;
            return out;
        }
        httplib::Result res;
        for (int attempt = 0;; ++attempt) {
            httplib::Client cli(parsed->origin());
            cli.set_follow_location(false);
            cli.set_connection_timeout(std::chrono::milliseconds(
                static_cast<int>(settings.timeout_seconds * 1000)));
            cli.set_read_timeout(std::chrono::milliseconds(
                static_cast<int>(settings.timeout_seconds * 1000)));
            cli.set_default_headers({{"User-Agent", settings.user_agent}});
            res = cli.Get(parsed->path);
            const bool transient = !res || res->status >= 500;
            if (!transient || attempt >= settings.retries) break;
            std::this_thread::sleep_for(std::chrono::milliseconds(
                static_cast<int>(500.0 * (1 << attempt))));
        }
        if (!res) {
            out.error = "transport error fetching " + url + ": " +
                        httplib::to_string(res.error());
            return out;
        }
        out.status = res->status;
        if (res->status >= 300 && res->status < 400) {
            std::string loc = res->get_header_value("Location");
            if (loc.empty()) {
                out.error = "redirect without Location from " + url;
                return out;
            }
            if (loc.rfind("http://", 0) == 0 || loc.rfind("https://", 0) == 0) {
                url = loc;
            } else if (!loc.empty() && loc[0] == '/') {
                url = parsed->origin() + loc;
            } else {
                const std::size_t cut = parsed->path.rfind('/');
                url = parsed->origin() + parsed->path.substr(0, cut + 1) + loc;
            }
            continue;
        }
        if (res->status >= 400) {
            out.error = "http status " + std::to_string(res->status) + " for " + url;
            return out;
        }
        if (res->body.size() > settings.max_body_bytes) {
            out.error = "body exceeds size cap (" + std::to_string(res->body.size()) +
                        " bytes) for " + url;
            return out;
        }
        out.ok = true;
        out.final_url = url;
        out.body = res->body;
        return out;
    }
    out.error = "too many redirects starting from " + entry.policy_url;
    return out;
}

// ---------------------------------------------------------------------------
// text extraction
// ---------------------------------------------------------------------------

namespace {

const std::set<std::string>& block_tags() {
    static const std::set<std::string> k = {
        "p",     "div",   "br",     "li",      "ul",     "ol",    "h1",  "h2",
        "h3",    "h4",    "h5",     "h6",      "table",  "tr",    "td",  "th",
        "section", "article", "header", "footer", "nav",  "aside", "title",
        "blockquote", "pre", "hr",  "form",    "dl",     "dt",    "dd"};
    return k;
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// decodes the entity starting at html[i] ('&'); returns decoded text and
// advances i past the entity, or returns "&" for unrecognized forms.
std::string decode_entity(const std::string& html, std::size_t& i) {
    const std::size_t semi = html.find(';', i);
    if (semi == std::string::npos || semi - i > 10) {
        ++i;
        return "&";
    }
    const std::string body = html.substr(i + 1, semi - i - 1);
    std::string out;
    if (body == "amp") out = "&";
    else if (body == "lt") out = "<";
    else if (body == "gt") out = ">";
    else if (body == "quot") out = "\"";
    else if (body == "apos" || body == "#39") out = "'";
    else if (body == "nbsp") out = " ";
    else if (!body.empty() && body[0] == '#') {
        long code = 0;
        if (body.size() > 2 && (body[1] == 'x' || body[1] == 'X'))
            code = std::strtol(body.c_str() + 2, nullptr, 16);
        else
            code = std::strtol(body.c_str() + 1, nullptr, 10);
        if (code > 0 && code < 128) out = std::string(1, static_cast<char>(code));
        else out = " ";  // non-ascii entities become plain spaces
    } else {
        ++i;
        return "&";
    }
    i = semi + 1;
    return out;
}

}  // namespace

std::string extract_text(const std::string& html) {
    std::string raw;  // '\n' only from block-level tags
    std::size_t i = 0;
    const std::size_t n = html.size();
    while (i < n) {
        const char c = html[i];
        if (c == '<') {
            if (html.compare(i, 4, "<!--") == 0) {
                const std::size_t end = html.find("-->", i + 4);
                i = end == std::string::npos ? n : end + 3;
                continue;
            }
            std::size_t j = i + 1;
            bool closing = false;
            if (j < n && html[j] == '/') {
                closing = true;
                ++j;
            }
            std::string name;
            while (j < n && (std::isalnum(static_cast<unsigned char>(html[j])) ||
                             html[j] == '!')) {
                name.push_back(static_cast<char>(
                    std::tolower(static_cast<unsigned char>(html[j]))));
                ++j;
            }
            const std::size_t gt = html.find('>', j);
            i = gt == std::string::npos ? n : gt + 1;
            if (!closing && (name == "script" || name == "style" || name == "head")) {
                // skip to the matching close tag, tolerant of missing ones
                const std::string close = "</" + name;
                std::size_t k = i;
                while (k < n) {
                    if (html.compare(k, close.size(), close) == 0 ||
                        lower(html.substr(k, close.size())) == close) {
                        const std::size_t end = html.find('>', k);
                        k = end == std::string::npos ? n : end + 1;
                        break;
                    }
                    ++k;
                }
                i = k;
                raw.push_back('\n');
                continue;
            }
            if (block_tags().count(name)) raw.push_back('\n');
        } else if (c == '&') {
            raw += decode_entity(html, i);
        } else {
            // raw whitespace (source line wraps) never becomes a line break
            raw.push_back(std::isspace(static_cast<unsigned char>(c)) ? ' ' : c);
            ++i;
        }
    }
    // collapse whitespace per line, drop empty lines
    std::string out;
    std::istringstream lines(raw);
    std::string line;
    while (std::getline(lines, line)) {
        std::string collapsed;
        bool in_space = true;  // also trims leading spaces
        for (char ch : line) {
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!in_space) collapsed.push_back(' ');
                in_space = true;
            } else {
                collapsed.push_back(ch);
                in_space = false;
            }
        }
        while (!collapsed.empty() && collapsed.back() == ' ') collapsed.pop_back();
        if (collapsed.empty()) continue;
        if (!out.empty()) out.push_back('\n');
        out += collapsed;
    }
    return out;
}

// ---------------------------------------------------------------------------
// sentence segmentation
// ---------------------------------------------------------------------------

namespace {

const std::set<std::string>& abbreviations() {
    static const std::set<std::string> k = {
        "e.g.", "i.e.",  "etc.", "vs.",  "cf.",   "sec.",  "no.",   "mr.",
        "mrs.", "ms.",   "dr.",  "prof.", "inc.", "ltd.",  "co.",   "corp.",
        "st.",  "art.",  "fig.", "al.",  "approx.", "dept.", "u.s.", "e.u."};
    return k;
}

bool opens_sentence(char c) {
    return std::isupper(static_cast<unsigned char>(c)) ||
           std::isdigit(static_cast<unsigned char>(c)) || c == '"' || c == '\'';
}

// trailing word (including internal dots) ending at position `end` inclusive
std::string trailing_word(const std::string& text, std::size_t end) {
    std::size_t start = end;
    while (start > 0 && !std::isspace(static_cast<unsigned char>(text[start - 1])))
        --start;
    return lower(text.substr(start, end - start + 1));
}

}  // namespace

std::vector<Sentence> segment_sentences(const std::string& text) {
    std::vector<Sentence> raw;
    std::size_t start = 0;
    const std::size_t n = text.size();
    auto push = [&](std::size_t from, std::size_t to) {  // [from, to)
        while (from < to && std::isspace(static_cast<unsigned char>(text[from])))
            ++from;
        std::size_t end = to;
        while (end > from && std::isspace(static_cast<unsigned char>(text[end - 1])))
            --end;
        if (end > from) raw.push_back({raw.size(), text.substr(from, end - from), from});
    };
    for (std::size_t i = 0; i < n; ++i) {
        const char c = text[i];
        if (c == '\n') {
            push(start, i);
            start = i + 1;
            continue;
        }
        if (c != '.' && c != '?' && c != '!') continue;
        std::size_t end = i;
        while (end + 1 < n && (text[end + 1] == '.' || text[end + 1] == '?' ||
                               text[end + 1] == '!' || text[end + 1] == '"' ||
                               text[end + 1] == '\''))
            ++end;
        // require whitespace then an opener
        std::size_t k = end + 1;
        if (k >= n) continue;
        if (!std::isspace(static_cast<unsigned char>(text[k]))) continue;
        while (k < n && std::isspace(static_cast<unsigned char>(text[k]))) ++k;
        if (k >= n || !opens_sentence(text[k])) continue;
        if (c == '.' && abbreviations().count(trailing_word(text, end))) continue;
        push(start, end + 1);
        start = end + 1;
        i = end;
    }
    push(start, n);

    // merge sentences under 3 tokens into the following sentence
    std::vector<Sentence> out;
    std::string pending;
    std::size_t pending_offset = 0;
    for (std::size_t s = 0; s < raw.size(); ++s) {
        std::string t = pending.empty() ? raw[s].text : pending + " " + raw[s].text;
        const std::size_t off = pending.empty() ? raw[s].offset : pending_offset;
        if (tokenize(t).size() < 3 && s + 1 < raw.size()) {
            pending = t;
            pending_offset = off;
            continue;
        }
        out.push_back({out.size(), t, off});
        pending.clear();
    }
    if (!pending.empty()) out.push_back({out.size(), pending, pending_offset});
    return out;
}

// ---------------------------------------------------------------------------
// sensitive-sentence search
// ---------------------------------------------------------------------------

std::vector<SentenceRecord> search_sensitive(
    const std::vector<Sentence>& sentences,
    const std::vector<KeywordPattern>& patterns) {
    if (patterns.empty())
        throw ConfigError("search_sensitive: empty pattern set");
    std::vector<SentenceRecord> out;
    out.reserve(sentences.size());
    for (const Sentence& s : sentences) {
        SentenceRecord rec;
        rec.index = s.index;
        rec.text = s.text;
        rec.offset = s.offset;
        std::set<std::string> toks;
        for (const std::string& t : tokenize(s.text)) toks.insert(t);
        for (const KeywordPattern& p : patterns) {
            bool all = !p.terms.empty();
            for (const std::string& term : p.terms)
                if (!toks.count(term)) {
                    all = false;
                    break;
                }
            if (all) rec.matched_patterns.push_back(p.id);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// ingest / corpus store
// ---------------------------------------------------------------------------

namespace {

void write_document(const std::string& out_dir, const PolicyDocument& doc) {
    const fs::path dir = fs::path(out_dir) / doc.app_id;
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "raw.html", std::ios::binary);
        f << doc.raw_html;
    }
    {
        std::ofstream f(dir / "text.txt", std::ios::binary);
        f << doc.text;
    }
    {
        std::ofstream f(dir / "sentences.jsonl", std::ios::binary);
        for (const SentenceRecord& s : doc.sentences) {
            json j;
            j["index"] = s.index;
            j["text"] = s.text;
            j["offset"] = s.offset;
            j["matched_patterns"] = s.matched_patterns;
            f << j.dump() << '\n';
        }
    }
}

struct HostGate {
    std::mutex mu;
    std::chrono::steady_clock::time_point last{};
};

}  // namespace

IngestReport ingest(const std::vector<PolicyManifestEntry>& entries,
                    const std::vector<KeywordPattern>& patterns,
                    const std::string& out_dir, const FetchSettings& settings,
                    std::size_t jobs) {
    IngestReport report;
    report.manifest_entries = entries.size();
    std::map<std::string, HostGate> gates;
    std::mutex gates_mu, report_mu;
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= entries.size()) return;
            const PolicyManifestEntry& e = entries[idx];
            auto parsed = parse_url(e.policy_url);
            HostGate* gate;
            {
                std::lock_guard<std::mutex> lk(gates_mu);
                gate = &gates[parsed ? parsed->host : ""];
            }
            FetchOutcome fo;
            {
                std::lock_guard<std::mutex> lk(gate->mu);
                const auto now = std::chrono::steady_clock::now();
                const auto min_gap = std::chrono::milliseconds(
                    static_cast<int>(settings.per_host_delay_seconds * 1000));
                if (gate->last.time_since_epoch().count() != 0 &&
                    now - gate->last < min_gap)
                    std::this_thread::sleep_for(min_gap - (now - gate->last));
                fo = fetch_policy(e, settings);
                gate->last = std::chrono::steady_clock::now();
            }
            if (!fo.ok) {
                std::lock_guard<std::mutex> lk(report_mu);
                ++report.failed;
                report.failures.push_back(e.app_id + ": " + fo.error);
                continue;
            }
            PolicyDocument doc;
            doc.app_id = e.app_id;
            doc.source_url = e.policy_url;
            doc.final_url = fo.final_url;
            doc.fetch_unix_time = static_cast<std::int64_t>(std::time(nullptr));
            doc.raw_html = fo.body;
            doc.text = extract_text(doc.raw_html);
            doc.sentences = search_sensitive(segment_sentences(doc.text), patterns);
            write_document(out_dir, doc);
            std::lock_guard<std::mutex> lk(report_mu);
            ++report.fetched;
        }
    };

    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < std::min(jobs, entries.size()); ++t)
            threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    return report;
}

std::vector<PolicyDocument> load_corpus(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("corpus directory not found: " + dir);
    std::vector<std::string> apps;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory()) apps.push_back(entry.path().filename().string());
    std::sort(apps.begin(), apps.end());
    std::vector<PolicyDocument> docs;
    for (const std::string& app : apps) {
        const fs::path base = fs::path(dir) / app;
        if (!fs::exists(base / "sentences.jsonl")) continue;
        PolicyDocument doc;
        doc.app_id = app;
        {
            std::ifstream f(base / "raw.html", std::ios::binary);
            std::ostringstream os;
            os << f.rdbuf();
            doc.raw_html = os.str();
        }
        {
            std::ifstream f(base / "text.txt", std::ios::binary);
            std::ostringstream os;
            os << f.rdbuf();
            doc.text = os.str();
        }
        std::ifstream f(base / "sentences.jsonl", std::ios::binary);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(f, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                json j = json::parse(line);
                SentenceRecord s;
                s.index = j.at("index").get<std::size_t>();
                s.text = j.at("text").get<std::string>();
                s.offset = j.value("offset", std::size_t{0});
                s.matched_patterns =
                    j.at("matched_patterns").get<std::vector<std::string>>();
                doc.sentences.push_back(std::move(s));
            } catch (const json::exception& e) {
                throw FormatError(app + "/sentences.jsonl line " +
                                  std::to_string(line_no) + ": " + e.what());
            }
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

void search_corpus(const std::string& dir, const std::vector<KeywordPattern>& patterns) {
    for (PolicyDocument& doc : load_corpus(dir)) {
        std::vector<Sentence> sentences;
        for (const SentenceRecord& s : doc.sentences)
            sentences.push_back({s.index, s.text, s.offset});
        doc.sentences = search_sensitive(sentences, patterns);
        write_document(dir, doc);
    }
}

}  // namespace nli
