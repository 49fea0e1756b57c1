#include "nlicheck/compliance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nlicheck/errors.hpp"

namespace nli {

using json = nlohmann::json;

std::vector<RegulationClause> load_clauses(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open clause file " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    if (!j.is_array()) throw FormatError(path + ": clause file must be a JSON array");
    std::vector<RegulationClause> out;
    std::set<std::string> ids;
    for (const auto& item : j) {
        RegulationClause c;
        try {
            c.id = item.at("id").get<std::string>();
            c.source = item.at("source").get<std::string>();
            c.text = item.at("text").get<std::string>();
            c.patterns = item.at("patterns").get<std::vector<std::vector<std::string>>>();
        } catch (const json::exception& e) {
            throw FormatError(path + ": bad clause entry: " + e.what());
        }
        if (c.text.empty()) throw ConfigError("clause '" + c.id + "' has empty text");
        if (c.patterns.empty())
            throw ConfigError("clause '" + c.id + "' has no keyword patterns");
        if (!ids.insert(c.id).second)
            throw ConfigError("duplicate clause id '" + c.id + "'");
        out.push_back(std::move(c));
    }
    if (out.empty()) std::cerr << "warning: clause file " << path << " is empty\n";
    return out;
}

std::vector<KeywordPattern> clause_patterns(
    const std::vector<RegulationClause>& clauses) {
    std::vector<KeywordPattern> out;
    for (const RegulationClause& c : clauses) {
        for (std::size_t k = 0; k < c.patterns.size(); ++k)
            out.push_back({c.id + "#" + std::to_string(k), c.patterns[k]});
    }
    return out;
}

std::string verdict_name(Verdict v) {
    switch (v) {
        case Verdict::potential_violation: return "potential_violation";
        case Verdict::supported: return "supported";
        case Verdict::inconclusive: return "inconclusive";
    }
    return "inconclusive";
}

Verdict verdict(const std::array<double, 3>& probs, double threshold) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw ConfigError("verdict threshold must be in (0,1)");
    const double sum = probs[0] + probs[1] + probs[2];
    if (std::abs(sum - 1.0) > 1e-4)
        throw DataError("verdict: probabilities sum to " + std::to_string(sum));
    // ties break toward the earlier class in [contradiction, neutral, entailment]
    std::size_t arg = 0;
    for (std::size_t j = 1; j < 3; ++j)
        if (probs[j] > probs[arg]) arg = j;
    if (arg == 0 && probs[0] >= threshold) return Verdict::potential_violation;
    if (arg == 2) return Verdict::supported;
    return Verdict::inconclusive;
}

std::vector<Finding> pair_and_predict(const std::vector<RegulationClause>& clauses,
                                      const std::vector<PolicyDocument>& corpus,
                                      Model<float>& model, const Vocabulary& vocab,
                                      const std::string& model_id, double threshold) {
    std::vector<Finding> out;
    for (const PolicyDocument& doc : corpus) {
        for (const SentenceRecord& sent : doc.sentences) {
            if (sent.matched_patterns.empty()) continue;
            for (const RegulationClause& clause : clauses) {
                const std::string prefix = clause.id + "#";
                const bool matched = std::any_of(
                    sent.matched_patterns.begin(), sent.matched_patterns.end(),
                    [&](const std::string& pid) {
                        return pid.rfind(prefix, 0) == 0;
                    });
                if (!matched) continue;
                NliExample ex;
                ex.premise_tokens = tokenize(clause.text);
                ex.hypothesis_tokens = tokenize(sent.text);
                ex.label = 0;  // unused
                EncodedPair pair = encode_example(ex, vocab, model.config.max_len);
                const std::array<float, 3> p = model.predict(pair);
                Finding f;
                f.app_id = doc.app_id;
                f.clause_id = clause.id;
                f.sentence_index = sent.index;
                f.sentence = sent.text;
                f.probs = {static_cast<double>(p[0]), static_cast<double>(p[1]),
                           static_cast<double>(p[2])};
                f.verdict = verdict(f.probs, threshold);
                f.model_id = model_id;
                out.push_back(std::move(f));
            }
        }
    }
    return out;
}

Report make_report(std::vector<Finding> findings, const std::string& model_id,
                   const std::string& clause_file_hash) {
    Report r;
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"))
        r.timestamp = std::atoll(epoch);
    else
        r.timestamp = static_cast<std::int64_t>(std::time(nullptr));
    r.model_id = model_id;
    r.clause_file_hash = clause_file_hash;
    std::stable_sort(findings.begin(), findings.end(),
                     [](const Finding& a, const Finding& b) {
                         if (a.probs[0] != b.probs[0]) return a.probs[0] > b.probs[0];
                         if (a.app_id != b.app_id) return a.app_id < b.app_id;
                         if (a.clause_id != b.clause_id) return a.clause_id < b.clause_id;
                         return a.sentence_index < b.sentence_index;
                     });
    for (const Finding& f : findings) {
        switch (f.verdict) {
            case Verdict::potential_violation: ++r.violations; break;
            case Verdict::supported: ++r.supported; break;
            case Verdict::inconclusive: ++r.inconclusive; break;
        }
    }
    r.findings = std::move(findings);
    return r;
}

namespace {

std::string prob_str(double p) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", p);
    return buf;
}

json finding_to_json(const Finding& f) {
    json j;
    j["app_id"] = f.app_id;
    j["clause_id"] = f.clause_id;
    j["sentence_index"] = f.sentence_index;
    j["sentence"] = f.sentence;
    // fixed 6-decimal formatting keeps renders byte-stable
    j["probs"] = {prob_str(f.probs[0]), prob_str(f.probs[1]), prob_str(f.probs[2])};
    j["verdict"] = verdict_name(f.verdict);
    j["model_id"] = f.model_id;
    return j;
}

}  // namespace

std::string render_report_jsonl(const Report& report) {
    std::ostringstream os;
    json header;
    header["type"] = "report";
    header["timestamp"] = report.timestamp;
    header["model_id"] = report.model_id;
    header["clause_file_hash"] = report.clause_file_hash;
    header["findings"] = report.findings.size();
    header["potential_violation"] = report.violations;
    header["supported"] = report.supported;
    header["inconclusive"] = report.inconclusive;
    os << header.dump() << '\n';
    for (const Finding& f : report.findings) os << finding_to_json(f).dump() << '\n';
    return os.str();
}

std::string render_report_text(const Report& report) {
    std::ostringstream os;
    os << "compliance report (model " << report.model_id << ", clauses "
       << report.clause_file_hash << ")\n";
    os << report.findings.size() << " findings: " << report.violations
       << " potential violations, " << report.supported << " supported, "
       << report.inconclusive << " inconclusive\n";
    std::map<std::string, std::map<std::string, std::vector<const Finding*>>> grouped;
    for (const Finding& f : report.findings)
        grouped[f.app_id][f.clause_id].push_back(&f);
    for (const auto& [app, clauses] : grouped) {
        os << "\n" << app << "\n";
        for (const auto& [clause, findings] : clauses) {
            os << "  " << clause << "\n";
            for (const Finding* f : findings) {
                os << "    [" << verdict_name(f->verdict) << "] c="
                   << prob_str(f->probs[0]) << " n=" << prob_str(f->probs[1])
                   << " e=" << prob_str(f->probs[2]) << "  sentence "
                   << f->sentence_index << ": " << f->sentence << "\n";
            }
        }
    }
    return os.str();
}

std::string file_content_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (f) {
        f.read(buf, sizeof(buf));
        const std::streamsize n = f.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

}  // namespace nli
