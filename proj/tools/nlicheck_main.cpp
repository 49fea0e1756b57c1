// Command-line driver wiring the pipeline stages together. Machine-readable
// output is line-delimited JSON; --pretty switches the report to plain text.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nlicheck/compliance.hpp"
#include "nlicheck/corpus.hpp"
#include "nlicheck/data.hpp"
#include "nlicheck/errors.hpp"
#include "nlicheck/model.hpp"
#include "nlicheck/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nli;

namespace {

struct DatasetChoice {
    std::string name = "snli";  // snli | mnli | mnli-government
    std::string data_dir = ".";
    std::string train_file, val_file, test_file;  // overrides

    std::optional<std::string> genre() const {
        if (name == "mnli-government") return std::string("government");
        return std::nullopt;
    }

    bool is_mnli() const { return name != "snli"; }

    std::string path(const std::string& split, const std::string& override_path) const {
        if (!override_path.empty()) return override_path;
        std::string file;
        if (!is_mnli()) {
            file = "snli_1.0_" + split + ".jsonl";
        } else {
            file = split == "train" ? "multinli_1.0_train.jsonl"
                                    : "multinli_1.0_dev_matched.jsonl";
        }
        return (fs::path(data_dir) / file).string();
    }

    LoadResult load(const std::string& split) const {
        const std::string override_path = split == "train" ? train_file
                                          : split == "dev" ? val_file
                                                           : test_file;
        const std::string p = path(split, override_path);
        return is_mnli() ? load_mnli(p, genre()) : load_snli(p);
    }
};

void add_dataset_flags(CLI::App* cmd, DatasetChoice& ds) {
    cmd->add_option("--dataset", ds.name, "snli, mnli, or mnli-government")
        ->check(CLI::IsMember({"snli", "mnli", "mnli-government"}));
    cmd->add_option("--data-dir", ds.data_dir, "directory holding the dataset files");
    cmd->add_option("--train-file", ds.train_file, "explicit training file path");
    cmd->add_option("--val-file", ds.val_file, "explicit validation file path");
    cmd->add_option("--test-file", ds.test_file, "explicit test file path");
}

void write_output(const std::string& out_path, const std::string& content) {
    if (out_path.empty()) {
        std::cout << content;
        return;
    }
    std::ofstream f(out_path, std::ios::binary);
    if (!f) throw IoError("cannot write " + out_path);
    f << content;
    if (!f) throw IoError("write failed for " + out_path);
}

// model + vocab loading shared by predict/check/report
struct LoadedModel {
    Model<float> model;
    Vocabulary vocab;
    std::string model_id;
};

LoadedModel load_model_and_vocab(const std::string& model_path,
                                 const std::string& vocab_path) {
    const std::string vp = vocab_path.empty() ? model_path + ".vocab" : vocab_path;
    LoadedModel lm;
    lm.vocab = Vocabulary::load(vp);
    LoadedCheckpoint ck = load_checkpoint(model_path, lm.vocab.hash());
    lm.model = std::move(ck.model);
    lm.model_id = ck.model_id;
    return lm;
}

int cmd_build_vocab(const DatasetChoice& ds, const std::string& out_path) {
    LoadResult data = ds.load("train");
    Vocabulary vocab = build_vocabulary(data.examples);
    vocab.save(out_path);
    json j;
    j["examples"] = data.examples.size();
    j["skipped_unlabeled"] = data.skipped_unlabeled;
    j["vocab_size"] = vocab.size();
    j["vocab_hash"] = vocab.hash();
    j["out"] = out_path;
    std::cout << j.dump() << "\n";
    return 0;
}

struct TrainArgs {
    int design = 0;  // 0 = pick per dataset
    DatasetChoice ds;
    std::string embeddings;
    std::size_t epochs = 0;      // 0 = per-dataset default
    std::size_t batch_size = 0;  // 0 = per-dataset default
    std::uint64_t seed = 42;
    std::size_t max_len = 42;
    std::string out = "model.ckpt";
    std::string vocab_out;  // default: out + ".vocab"
    std::string history_out;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
    DatasetChoice ds = a.ds;
    int design = a.design;
    if (design == 0) design = ds.is_mnli() ? 2 : 1;
    std::size_t epochs = a.epochs;
    std::size_t batch_size = a.batch_size;
    if (epochs == 0)
        epochs = ds.name == "snli" ? 30 : (ds.name == "mnli" ? 25 : 60);
    if (batch_size == 0) batch_size = ds.name == "snli" ? 512 : 1024;

    LoadResult train_data = ds.load("train");
    LoadResult val_data = ds.load("dev");
    Vocabulary vocab = build_vocabulary(train_data.examples);

    ModelConfig mc = design == 1 ? ModelConfig::design_1_defaults(vocab.size())
                                 : ModelConfig::design_2_defaults(vocab.size());
    mc.max_len = a.max_len;

    EmbeddingMatrix emb =
        a.embeddings.empty()
            ? random_embeddings(vocab, mc.embed_dim, a.seed ^ 0xe7)
            : load_embeddings(a.embeddings, vocab, mc.embedding_trainable,
                              mc.embed_dim, a.seed ^ 0xe7);
    if (!a.embeddings.empty())
        std::cerr << "embedding coverage: " << emb.coverage * 100.0 << "% of "
                  << vocab.size() << " tokens\n";

    Model<float> model = build_model(mc, emb.matrix, a.seed);

    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = batch_size;
    tc.seed = a.seed;
    tc.max_len = a.max_len;
    tc.verbose = !a.quiet;
    TrainResult result = train(model, train_data.examples, val_data.examples,
                               vocab, tc);

    save_checkpoint(model, vocab.hash(), a.out);
    const std::string vocab_path = a.vocab_out.empty() ? a.out + ".vocab" : a.vocab_out;
    vocab.save(vocab_path);
    if (!a.history_out.empty())
        write_output(a.history_out, history_to_jsonl(result.history));

    json j;
    j["design"] = design;
    j["dataset"] = ds.name;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["seed"] = a.seed;
    j["train_examples"] = train_data.examples.size();
    j["val_examples"] = val_data.examples.size();
    j["best_epoch"] = result.best_epoch;
    j["best_val_accuracy"] = result.best_val_accuracy;
    j["checkpoint"] = a.out;
    j["vocab"] = vocab_path;
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_evaluate(const DatasetChoice& ds, const std::string& split,
                 const std::string& model_path, const std::string& vocab_path,
                 std::size_t batch_size) {
    LoadedModel lm = load_model_and_vocab(model_path, vocab_path);
    LoadResult data = ds.load(split);
    EvalResult r = evaluate(lm.model, data.examples, lm.vocab, batch_size);
    json j;
    j["split"] = split;
    j["count"] = r.count;
    j["accuracy"] = r.accuracy;
    j["mean_loss"] = r.mean_loss;
    json conf = json::array();
    for (const auto& row : r.confusion) conf.push_back(row);
    j["confusion"] = conf;
    j["model_id"] = lm.model_id;
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_predict(const std::string& premise, const std::string& hypothesis,
                const std::string& model_path, const std::string& vocab_path) {
    LoadedModel lm = load_model_and_vocab(model_path, vocab_path);
    NliExample ex;
    ex.premise_tokens = tokenize(premise);
    ex.hypothesis_tokens = tokenize(hypothesis);
    EncodedPair pair = encode_example(ex, lm.vocab, lm.model.config.max_len);
    const std::array<float, 3> p = lm.model.predict(pair);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < 3; ++i)
        if (p[i] > p[arg]) arg = i;
    json j;
    for (std::size_t i = 0; i < 3; ++i) j[class_order()[i]] = p[i];
    j["argmax"] = class_order()[arg];
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_ingest(const std::string& manifest_path, const std::string& clauses_path,
               const std::string& out_dir, std::size_t jobs) {
    ManifestLoadResult mf = load_manifest(manifest_path);
    std::vector<KeywordPattern> patterns;
    if (!clauses_path.empty()) patterns = clause_patterns(load_clauses(clauses_path));
    IngestReport rep = ingest(mf.entries, patterns, out_dir, FetchSettings{}, jobs);
    json j;
    j["manifest_entries"] = rep.manifest_entries;
    j["skipped_invalid"] = mf.skipped_invalid;
    j["fetched"] = rep.fetched;
    j["failed"] = rep.failed;
    j["failures"] = rep.failures;
    j["out"] = out_dir;
    std::cout << j.dump() << "\n";
    return rep.fetched > 0 || rep.manifest_entries == 0 ? 0 : 1;
}

int cmd_search(const std::string& corpus_dir, const std::string& clauses_path) {
    std::vector<KeywordPattern> patterns = clause_patterns(load_clauses(clauses_path));
    search_corpus(corpus_dir, patterns);
    std::vector<PolicyDocument> docs = load_corpus(corpus_dir);
    for (const PolicyDocument& doc : docs) {
        for (const SentenceRecord& s : doc.sentences) {
            if (s.matched_patterns.empty()) continue;
            json j;
            j["app_id"] = doc.app_id;
            j["sentence_index"] = s.index;
            j["sentence"] = s.text;
            j["matched_patterns"] = s.matched_patterns;
            std::cout << j.dump() << "\n";
        }
    }
    return 0;
}

struct CheckArgs {
    std::string manifest, corpus_dir, clauses, model, vocab, out;
    double threshold = 0.5;
    std::size_t jobs = 8;
    bool pretty = false;
    std::string work_dir;  // corpus location when ingesting from a manifest
};

int cmd_check(const CheckArgs& a, bool report_only) {
    std::vector<RegulationClause> clauses = load_clauses(a.clauses);
    std::vector<KeywordPattern> patterns = clause_patterns(clauses);

    std::string corpus_dir = a.corpus_dir;
    if (!report_only && !a.manifest.empty()) {
        corpus_dir = a.work_dir.empty() ? (fs::path(a.out.empty() ? "." : fs::path(a.out).parent_path().string()) / "corpus").string()
                                        : a.work_dir;
        ManifestLoadResult mf = load_manifest(a.manifest);
        IngestReport rep =
            ingest(mf.entries, patterns, corpus_dir, FetchSettings{}, a.jobs);
        std::cerr << "ingested " << rep.fetched << "/" << rep.manifest_entries
                  << " policies";
        if (rep.failed) std::cerr << " (" << rep.failed << " failed)";
        std::cerr << "\n";
    } else {
        if (corpus_dir.empty())
            throw ConfigError("either --manifest or --corpus is required");
        search_corpus(corpus_dir, patterns);
    }

    LoadedModel lm = load_model_and_vocab(a.model, a.vocab);
    std::vector<PolicyDocument> docs = load_corpus(corpus_dir);
    std::vector<Finding> findings = pair_and_predict(clauses, docs, lm.model,
                                                     lm.vocab, lm.model_id,
                                                     a.threshold);
    Report report = make_report(std::move(findings), lm.model_id,
                                file_content_hash(a.clauses));
    write_output(a.out, a.pretty ? render_report_text(report)
                                 : render_report_jsonl(report));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NLI-based privacy-policy compliance checker"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    std::uint64_t seed = 42;
    bool quiet = false;
    app.add_option("--seed", seed, "global random seed")->capture_default_str();
    app.add_flag("--quiet", quiet, "suppress progress output on stderr");

    // build-vocab
    DatasetChoice bv_ds;
    std::string bv_out = "vocab.tsv";
    auto* bv = app.add_subcommand("build-vocab",
                                  "build a vocabulary from a training set");
    add_dataset_flags(bv, bv_ds);
    bv->add_option("--out", bv_out, "vocabulary output path")->capture_default_str();

    // train
    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "train an entailment model");
    tr->add_option("--design", ta.design, "1 (sum pooling) or 2 (attention + bilstm); default per dataset")
        ->check(CLI::IsMember({1, 2}));
    add_dataset_flags(tr, ta.ds);
    tr->add_option("--embeddings", ta.embeddings,
                   "pretrained embedding text file (optional)");
    tr->add_option("--epochs", ta.epochs, "training epochs (default per dataset)");
    tr->add_option("--batch-size", ta.batch_size, "batch size (default per dataset)");
    tr->add_option("--max-len", ta.max_len, "sentence truncation length")
        ->capture_default_str();
    tr->add_option("--out", ta.out, "checkpoint output path")->capture_default_str();
    tr->add_option("--vocab-out", ta.vocab_out,
                   "vocabulary output path (default: <out>.vocab)");
    tr->add_option("--history-out", ta.history_out,
                   "write per-epoch metrics as jsonl");

    // evaluate
    DatasetChoice ev_ds;
    std::string ev_split = "dev", ev_model, ev_vocab;
    std::size_t ev_batch = 256;
    auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset split");
    add_dataset_flags(ev, ev_ds);
    ev->add_option("--split", ev_split, "train, dev, or test")
        ->check(CLI::IsMember({"train", "dev", "test"}));
    ev->add_option("--model", ev_model, "checkpoint path")->required();
    ev->add_option("--vocab", ev_vocab, "vocabulary path (default: <model>.vocab)");
    ev->add_option("--batch-size", ev_batch, "evaluation batch size")
        ->capture_default_str();

    // predict
    std::string pr_premise, pr_hypothesis, pr_model, pr_vocab;
    auto* pr = app.add_subcommand("predict", "classify one premise/hypothesis pair");
    pr->add_option("--premise", pr_premise, "premise text")->required();
    pr->add_option("--hypothesis", pr_hypothesis, "hypothesis text")->required();
    pr->add_option("--model", pr_model, "checkpoint path")->required();
    pr->add_option("--vocab", pr_vocab, "vocabulary path (default: <model>.vocab)");

    // ingest
    std::string in_manifest, in_clauses, in_out = "corpus";
    std::size_t in_jobs = 8;
    auto* ig = app.add_subcommand("ingest", "fetch policy pages from a manifest");
    ig->add_option("--manifest", in_manifest, "manifest json path")->required();
    ig->add_option("--clauses", in_clauses,
                   "clause file for keyword tagging (optional)");
    ig->add_option("--out", in_out, "corpus output directory")->capture_default_str();
    ig->add_option("--jobs", in_jobs, "max concurrent fetches")->capture_default_str();

    // search
    std::string se_corpus, se_clauses;
    auto* se = app.add_subcommand("search", "re-run keyword search over a stored corpus");
    se->add_option("--corpus", se_corpus, "corpus directory")->required();
    se->add_option("--clauses", se_clauses, "clause file")->required();

    // check
    CheckArgs ca;
    auto* ck = app.add_subcommand("check",
                                  "end-to-end compliance check (ingest + search + predict)");
    ck->add_option("--manifest", ca.manifest, "manifest json path (fetches fresh)");
    ck->add_option("--corpus", ca.corpus_dir, "stored corpus directory");
    ck->add_option("--clauses", ca.clauses, "clause file")->required();
    ck->add_option("--model", ca.model, "checkpoint path")->required();
    ck->add_option("--vocab", ca.vocab, "vocabulary path (default: <model>.vocab)");
    ck->add_option("--threshold", ca.threshold,
                   "contradiction probability needed for potential_violation")
        ->capture_default_str();
    ck->add_option("--jobs", ca.jobs, "max concurrent fetches")->capture_default_str();
    ck->add_option("--work-dir", ca.work_dir,
                   "where to store the fetched corpus (with --manifest)");
    ck->add_option("--out", ca.out, "report output path (default: stdout)");
    ck->add_flag("--pretty", ca.pretty, "human-readable text instead of jsonl");

    // report: re-render findings for a stored corpus without fetching
    CheckArgs ra;
    auto* rp = app.add_subcommand("report",
                                  "score a stored corpus and render a report");
    rp->add_option("--corpus", ra.corpus_dir, "stored corpus directory")->required();
    rp->add_option("--clauses", ra.clauses, "clause file")->required();
    rp->add_option("--model", ra.model, "checkpoint path")->required();
    rp->add_option("--vocab", ra.vocab, "vocabulary path (default: <model>.vocab)");
    rp->add_option("--threshold", ra.threshold,
                   "contradiction probability needed for potential_violation")
        ->capture_default_str();
    rp->add_option("--out", ra.out, "report output path (default: stdout)");
    rp->add_flag("--pretty", ra.pretty, "human-readable text instead of jsonl");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    ta.seed = seed;
    ta.quiet = quiet;

    try {
        if (bv->parsed()) return cmd_build_vocab(bv_ds, bv_out);
        if (tr->parsed()) return cmd_train(ta);
        if (ev->parsed())
            return cmd_evaluate(ev_ds, ev_split, ev_model, ev_vocab, ev_batch);
        if (pr->parsed()) return cmd_predict(pr_premise, pr_hypothesis, pr_model, pr_vocab);
        if (ig->parsed()) return cmd_ingest(in_manifest, in_clauses, in_out, in_jobs);
        if (se->parsed()) return cmd_search(se_corpus, se_clauses);
        if (ck->parsed()) return cmd_check(ca, false);
        if (rp->parsed()) return cmd_check(ra, true);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
