#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "nlicheck/corpus.hpp"
#include "nlicheck/data.hpp"
#include "nlicheck/errors.hpp"
#include "nlicheck/rng.hpp"

using namespace nli;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = NLICHECK_FIXTURES;

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

struct TempFile {
    std::string path;
    TempFile(const std::string& name, const std::string& content)
        : path("/tmp/nlicheck_" + name) {
        std::ofstream f(path, std::ios::binary);
        f << content;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path("/tmp/nlicheck_" + name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// serves the three policy fixtures plus failure endpoints on a loopback port
struct FixtureServer {
    httplib::Server server;
    int port = 0;
    std::thread thread;

    FixtureServer() {
        server.Get("/alpha", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(slurp(kFixtures + "/policies/app_alpha.html"), "text/html");
        });
        server.Get("/beta", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(slurp(kFixtures + "/policies/app_beta.html"), "text/html");
        });
        server.Get("/gamma", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(slurp(kFixtures + "/policies/app_gamma.html"), "text/html");
        });
        server.Get("/moved", [](const httplib::Request&, httplib::Response& res) {
            res.set_redirect("/gamma");
        });
        server.Get("/gone", [](const httplib::Request&, httplib::Response& res) {
            res.status = 404;
            res.set_content("not here", "text/plain");
        });
        server.Get("/loop", [](const httplib::Request&, httplib::Response& res) {
            res.set_redirect("/loop");
        });
        port = server.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FixtureServer() {
        server.stop();
        thread.join();
    }
    std::string url(const std::string& path) const {
        return "http://127.0.0.1:" + std::to_string(port) + path;
    }
};

FetchSettings fast_settings() {
    FetchSettings s;
    s.timeout_seconds = 5.0;
    s.retries = 0;
    s.per_host_delay_seconds = 0.0;
    return s;
}

std::vector<KeywordPattern> consent_patterns() {
    return {{"withdraw-consent", {"withdraw", "consent"}},
            {"retention", {"retained"}}};
}

}  // namespace

TEST_CASE("manifest loading and validation") {
    TempFile good("manifest.json", R"([
        {"app_id": "a", "policy_url": "https://example.com/privacy"},
        {"app_id": "b", "policy_url": "ftp://example.com/privacy"},
        {"app_id": "c"},
        {"app_id": "d", "policy_url": "http://example.org:8080/p?lang=en"}
    ])");
    ManifestLoadResult r = load_manifest(good.path);
    REQUIRE(r.entries.size() == 2);
    CHECK(r.entries[0].app_id == "a");
    CHECK(r.entries[1].policy_url == "http://example.org:8080/p?lang=en");
    CHECK(r.skipped_invalid == 2);

    TempFile notarray("manifest_obj.json", R"({"app_id": "a"})");
    CHECK_THROWS_AS(load_manifest(notarray.path), FormatError);
    TempFile broken("manifest_broken.json", "[{");
    CHECK_THROWS_AS(load_manifest(broken.path), FormatError);
    CHECK_THROWS_AS(load_manifest("/tmp/nlicheck_no_such_manifest.json"), IoError);
}

TEST_CASE("html text extraction") {
    // script, style, head and comments vanish; block tags break lines
    const std::string html =
        "<html><head><title>T</title><style>p{}</style></head><body>"
        "<script>var x = '<p>not text</p>';</script>"
        "<!-- hidden -->"
        "<h1>Title</h1><p>First <b>bold</b> paragraph.</p>"
        "<p>Second\n   wrapped\n   line.</p></body></html>";
    const std::string text = extract_text(html);
    CHECK(text == "Title\nFirst bold paragraph.\nSecond wrapped line.");

    // entities
    CHECK(extract_text("<p>a &amp; b &lt;c&gt; &quot;d&quot; &#39;e&#39;</p>") ==
          "a & b <c> \"d\" 'e'");
    CHECK(extract_text("<p>x&nbsp;y</p>") == "x y");
    CHECK(extract_text("<p>&#65;&#x42;</p>") == "AB");
    // unknown named entities and bare ampersands pass through verbatim
    CHECK(extract_text("<p>&copy; stray &broken") == "&copy; stray &broken");

    // inline tags never split; raw newlines in the source never split
    CHECK(extract_text("one <span>two</span>\nthree") == "one two three");
    CHECK(extract_text("") == "");

    // fixture page sanity: no style/script residue, key sentences present
    const std::string alpha = extract_text(slurp(kFixtures + "/policies/app_alpha.html"));
    CHECK(alpha.find("font-family") == std::string::npos);
    CHECK(alpha.find("console.log") == std::string::npos);
    CHECK(alpha.find("legal") == std::string::npos);
    CHECK(alpha.find("withdraw your consent at any time") != std::string::npos);
    CHECK(alpha.find("privacy@alpha.example") != std::string::npos);
}

TEST_CASE("sentence segmentation") {
    const std::string source =
        "We collect data. You can opt out at any time! Is that clear? Yes it is.";
    std::vector<Sentence> s = segment_sentences(source);
    REQUIRE(s.size() == 4);
    CHECK(s[0].text == "We collect data.");
    CHECK(s[1].text == "You can opt out at any time!");
    CHECK(s[2].text == "Is that clear?");
    CHECK(s[3].text == "Yes it is.");
    for (const Sentence& x : s) {
        CHECK(x.index == (std::size_t)(&x - s.data()));
        // offsets point back into the source text
        CHECK(source.substr(x.offset, x.text.size()) == x.text);
    }

    // abbreviations and decimals do not end sentences
    std::vector<Sentence> abbr = segment_sentences(
        "We keep logs, e.g. access times, for audit. See sec. 4 for details.");
    REQUIRE(abbr.size() == 2);
    CHECK(abbr[0].text == "We keep logs, e.g. access times, for audit.");
    std::vector<Sentence> dec =
        segment_sentences("Version 4.5 applies here. The rest is unchanged.");
    REQUIRE(dec.size() == 2);
    CHECK(dec[0].text == "Version 4.5 applies here.");

    // a period followed by a lowercase continuation does not split
    std::vector<Sentence> low =
        segment_sentences("This sentence mentions example.com and keeps going fine.");
    CHECK(low.size() == 1);

    // newline always terminates a sentence
    std::vector<Sentence> nl = segment_sentences("First heading line\nSecond line here");
    REQUIRE(nl.size() == 2);
    CHECK(nl[0].text == "First heading line");

    // fragments under 3 tokens merge into the following sentence
    std::vector<Sentence> merged =
        segment_sentences("Privacy\nWe explain our practices below.");
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].text == "Privacy We explain our practices below.");
    CHECK(merged[0].offset == 0);
    // a trailing short fragment attaches nowhere and is kept as-is
    std::vector<Sentence> tail = segment_sentences("A full sentence comes first.\nBye");
    REQUIRE(tail.size() == 2);
    CHECK(tail[1].text == "Bye");

    CHECK(segment_sentences("").empty());
}

TEST_CASE("keyword search is all-terms-within, any-pattern-across") {
    std::vector<Sentence> sentences = {
        {0, "You may withdraw your consent at any time.", 0},
        {1, "Consent is required before we share data.", 0},
        {2, "Records are retained for ten years.", 0},
        {3, "Nothing sensitive here.", 0},
        {4, "Users withdraw money, and data is retained with consent.", 0},
    };
    std::vector<SentenceRecord> rec = search_sensitive(sentences, consent_patterns());
    REQUIRE(rec.size() == 5);
    CHECK(rec[0].matched_patterns == std::vector<std::string>{"withdraw-consent"});
    CHECK(rec[1].matched_patterns.empty());  // "consent" alone is not enough
    CHECK(rec[2].matched_patterns == std::vector<std::string>{"retention"});
    CHECK(rec[3].matched_patterns.empty());
    CHECK(rec[4].matched_patterns ==
          std::vector<std::string>{"withdraw-consent", "retention"});

    // token-boundary matching: "consents" is a different token than "consent"
    std::vector<Sentence> near = {{0, "The user consents to withdraw.", 0}};
    CHECK(search_sensitive(near, consent_patterns())[0].matched_patterns.empty());
    // matching is case-insensitive through tokenization
    std::vector<Sentence> caps = {{0, "WITHDRAW Consent now.", 0}};
    CHECK(search_sensitive(caps, consent_patterns())[0].matched_patterns ==
          std::vector<std::string>{"withdraw-consent"});

    CHECK_THROWS_AS(search_sensitive(sentences, {}), ConfigError);
}

TEST_CASE("keyword search agrees with a brute-force token scan") {
    SeededRng rng(404);
    const std::vector<std::string> words = {"consent",  "withdraw", "data",
                                            "retained", "share",    "delete",
                                            "account",  "time"};
    std::vector<Sentence> sentences;
    for (std::size_t i = 0; i < 200; ++i) {
        std::string text;
        const std::size_t len = 3 + rng.next_below(8);
        for (std::size_t w = 0; w < len; ++w) {
            if (w) text += " ";
            text += words[rng.next_below(words.size())];
        }
        sentences.push_back({i, text + ".", 0});
    }
    std::vector<KeywordPattern> patterns;
    for (std::size_t p = 0; p < 10; ++p) {
        KeywordPattern kp;
        kp.id = "p" + std::to_string(p);
        const std::size_t nterms = 1 + rng.next_below(3);
        for (std::size_t t = 0; t < nterms; ++t)
            kp.terms.push_back(words[rng.next_below(words.size())]);
        patterns.push_back(kp);
    }
    std::vector<SentenceRecord> rec = search_sensitive(sentences, patterns);
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        std::vector<std::string> expected;
        for (const KeywordPattern& p : patterns) {
            bool all = true;
            for (const std::string& term : p.terms) {
                bool found = false;
                std::istringstream is(sentences[i].text);
                std::string tok;
                while (is >> tok) {
                    while (!tok.empty() && tok.back() == '.') tok.pop_back();
                    if (tok == term) found = true;
                }
                if (!found) {
                    all = false;
                    break;
                }
            }
            if (all) expected.push_back(p.id);
        }
        CHECK(rec[i].matched_patterns == expected);
    }
}

TEST_CASE("fetching over a local server") {
    FixtureServer srv;
    FetchSettings settings = fast_settings();

    FetchOutcome ok = fetch_policy({"alpha", srv.url("/alpha")}, settings);
    REQUIRE(ok.ok);
    CHECK(ok.status == 200);
    CHECK(ok.body == slurp(kFixtures + "/policies/app_alpha.html"));
    CHECK(ok.final_url == srv.url("/alpha"));

    // relative redirects resolve against the origin
    FetchOutcome moved = fetch_policy({"gamma", srv.url("/moved")}, settings);
    REQUIRE(moved.ok);
    CHECK(moved.final_url == srv.url("/gamma"));
    CHECK(moved.body == slurp(kFixtures + "/policies/app_gamma.html"));

    FetchOutcome gone = fetch_policy({"gone", srv.url("/gone")}, settings);
    CHECK(!gone.ok);
    CHECK(gone.error.find("404") != std::string::npos);

    FetchOutcome loop = fetch_policy({"loop", srv.url("/loop")}, settings);
    CHECK(!loop.ok);
    CHECK(loop.error.find("redirect") != std::string::npos);

    FetchOutcome refused =
        fetch_policy({"refused", "http://127.0.0.1:9/never"}, settings);
    CHECK(!refused.ok);

    // oversized bodies are rejected
    FetchSettings tiny = settings;
    tiny.max_body_bytes = 10;
    FetchOutcome big = fetch_policy({"alpha", srv.url("/alpha")}, tiny);
    CHECK(!big.ok);
    CHECK(big.error.find("size cap") != std::string::npos);
}

TEST_CASE("ingest, store round-trip, and re-search") {
    FixtureServer srv;
    TempDir corpus("corpus_rt");
    std::vector<PolicyManifestEntry> entries = {
        {"app_alpha", srv.url("/alpha")},
        {"app_beta", srv.url("/beta")},
        {"app_gamma", srv.url("/moved")},  // via redirect
        {"app_dead", srv.url("/gone")},
    };
    IngestReport report =
        ingest(entries, consent_patterns(), corpus.path.string(), fast_settings(), 4);
    CHECK(report.manifest_entries == 4);
    CHECK(report.fetched == 3);
    CHECK(report.failed == 1);
    REQUIRE(report.failures.size() == 1);
    CHECK(report.failures[0].find("app_dead") == 0);

    for (const std::string& app : {"app_alpha", "app_beta", "app_gamma"}) {
        CHECK(fs::exists(corpus.path / app / "raw.html"));
        CHECK(fs::exists(corpus.path / app / "text.txt"));
        CHECK(fs::exists(corpus.path / app / "sentences.jsonl"));
    }
    CHECK(!fs::exists(corpus.path / "app_dead"));

    std::vector<PolicyDocument> docs = load_corpus(corpus.path.string());
    REQUIRE(docs.size() == 3);  // sorted by app_id
    CHECK(docs[0].app_id == "app_alpha");
    CHECK(docs[2].app_id == "app_gamma");
    CHECK(docs[0].raw_html == slurp(kFixtures + "/policies/app_alpha.html"));

    // stored sentence matches reflect the pattern set used at ingest time
    std::set<std::string> alpha_hits;
    for (const SentenceRecord& s : docs[0].sentences)
        for (const std::string& p : s.matched_patterns) alpha_hits.insert(p);
    CHECK(alpha_hits.count("withdraw-consent") == 1);
    bool beta_retention = false;
    for (const SentenceRecord& s : docs[1].sentences)
        for (const std::string& p : s.matched_patterns)
            if (p == "retention") beta_retention = true;
    CHECK(beta_retention);

    // stored records agree with re-running the pipeline on the stored text
    for (const PolicyDocument& doc : docs) {
        std::vector<SentenceRecord> fresh =
            search_sensitive(segment_sentences(doc.text), consent_patterns());
        REQUIRE(fresh.size() == doc.sentences.size());
        for (std::size_t i = 0; i < fresh.size(); ++i) {
            CHECK(fresh[i].text == doc.sentences[i].text);
            CHECK(fresh[i].offset == doc.sentences[i].offset);
            CHECK(fresh[i].matched_patterns == doc.sentences[i].matched_patterns);
        }
    }

    // re-search with a different pattern set rewrites the stored matches
    search_corpus(corpus.path.string(), {{"selling", {"sell"}}});
    std::vector<PolicyDocument> after = load_corpus(corpus.path.string());
    std::set<std::string> all_after;
    for (const PolicyDocument& doc : after)
        for (const SentenceRecord& s : doc.sentences)
            for (const std::string& p : s.matched_patterns) all_after.insert(p);
    CHECK(all_after == std::set<std::string>{"selling"});
    // sentence texts and offsets are untouched by re-search
    for (std::size_t d = 0; d < after.size(); ++d) {
        REQUIRE(after[d].sentences.size() == docs[d].sentences.size());
        for (std::size_t i = 0; i < after[d].sentences.size(); ++i) {
            CHECK(after[d].sentences[i].text == docs[d].sentences[i].text);
            CHECK(after[d].sentences[i].offset == docs[d].sentences[i].offset);
        }
    }

    CHECK_THROWS_AS(load_corpus("/tmp/nlicheck_no_such_corpus"), IoError);
}
