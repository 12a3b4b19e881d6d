// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "defx/harness.hpp"
#include "defx/nn/adamw.hpp"
#include "defx/nn/gradcheck.hpp"
#include "defx/nn/loss.hpp"
#include "fixtures.hpp"

using namespace defx;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

corpus::SentenceRecord record(const std::string& id, const std::string& text, int label) {
    corpus::SentenceRecord r;
    r.id = id;
    r.text = r.raw_text = text;
    r.label = label;
    return r;
}

std::vector<corpus::SentenceRecord> overfit_fixture() {
    const std::vector<std::pair<std::string, int>> rows{
        {"Pathogens include bacteria , protists , fungi and other infectious organisms .", 1},
        {"Photosynthesis is the process by which plants convert light into chemical energy .", 1},
        {"A monomer is a molecule that can bond to other identical molecules .", 1},
        {"Osmosis is defined as the diffusion of water across a membrane .", 1},
        {"Toll goods are goods that are excludable but not rivalrous .", 1},
        {"Inflation refers to a general rise in the price level .", 1},
        {"A tariff is a tax imposed on imported goods .", 1},
        {"Federalism is a system in which power is divided between levels of government .", 1},
        {"An enzyme is a protein that speeds up a chemical reaction .", 1},
        {"Demand means the quantity buyers are willing to purchase at each price .", 1},
        {"The committee met again on Tuesday afternoon .", 0},
        {"In doing so , monomers release water molecules as byproducts .", 0},
        {"United States v. Miller was decided in 1939 .", 0},
        {"Many students found the second chapter difficult .", 0},
        {"The river flooded the valley after heavy rain .", 0},
        {"Prices rose sharply during the winter months .", 0},
        {"Several cells were observed under the microscope .", 0},
        {"The court announced its ruling the following week .", 0},
        {"Farmers planted wheat across the northern plains .", 0},
        {"This result was later confirmed by other laboratories .", 0},
    };
    std::vector<corpus::SentenceRecord> out;
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.push_back(record("overfit#" + std::to_string(i + 1), rows[i].first, rows[i].second));
    return out;
}

double lse_loss(const nn::Matrix& logits, int label) {
    const double m = std::max(logits[0], logits[1]);
    return m + std::log(std::exp(logits[0] - m) + std::exp(logits[1] - m)) - logits[label];
}

// 1. Gradient fidelity.
Outcome gradient_fidelity() {
    const std::vector<corpus::SentenceRecord> records{
        record("g#1", "osmosis is defined as diffusion", 1),
        record("g#2", "the river flooded the valley", 0),
        record("g#3", "a tariff is a tax", 1),
        record("g#4", "prices rose in winter", 0),
    };
    Outcome out{true, ""};
    double worst = 0.0;
    std::size_t checked = 0;
    for (ModelKind kind : {ModelKind::gcn_only, ModelKind::encoder_only, ModelKind::joint}) {
        ModelBuilder b;
        b.config.kind = kind;
        b.config.embedding_dim = 8;
        b.config.gcn.d_gcn = 4;
        b.config.enc.d_model = 8;
        b.config.enc.heads = 2;
        b.config.enc.layers = 2;
        b.config.enc.ffn_dim = 8;
        b.config.enc.max_len = 8;
        Model model = b.build(records, 17);
        nn::Rng rng(99);
        for (nn::Param* p : model.params())
            for (double& v : p->value.data()) v += nn::uniform(rng, -0.2, 0.2);
        // Keep the readout ReLU away from its kink.
        for (double& v : model.gcn.readout_b.value.data()) v += 0.5;
        const auto examples = model.prepare(records);
        const auto params = model.params();
        const auto report = nn::grad_check(params, [&](nn::Tape& tape) {
            nn::Var total = model.loss(tape, examples[0]);
            for (std::size_t i = 1; i < examples.size(); ++i) total = tape.add(total, model.loss(tape, examples[i]));
            return total;
        });
        for (const auto& e : report.entries) {
            worst = std::max(worst, e.max_rel_error);
            if (!e.passed) {
                out.pass = false;
                out.detail += std::string(to_string(kind)) + ":" + e.name + " rel=" + fmt("%.3g", e.max_rel_error) + " ";
            }
        }
        checked += params.size();
    }
    out.detail += std::to_string(checked) + " parameter tensors over 3 model kinds, max rel error " + fmt("%.3g", worst);
    return out;
}

// 2. Graph oracle equivalence.
Outcome graph_oracle() {
    nn::Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng() % 50;
        const std::size_t window = 1 + rng() % 6;
        std::vector<text::WordId> ids(n);
        for (auto& id : ids) id = rng() % 7;
        const auto g = graph::build_graph(ids, window);
        std::set<std::pair<std::size_t, std::size_t>> got, want;
        for (const auto& e : g.edges) got.emplace(e.src, e.dst);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t d = i > j ? i - j : j - i;
                if (d > 0 && d <= window) want.emplace(i, j);
            }
        if (got != want || g.edge_count() != want.size())
            return {false, "mismatch at length " + std::to_string(n) + ", window " + std::to_string(window)};
    }
    const std::vector<text::WordId> four{0, 1, 2, 3};
    const auto g = graph::build_graph(four, 2);
    if (g.neighbors(1) != std::vector<std::size_t>{0, 2, 3}) return {false, "4-token window-2 neighbors of token 2 wrong"};
    return {true, "100 random cases match brute force; 4-token window-2 case N(T2)={T1,T3,T4}"};
}

// 3. Metric oracle equivalence.
Outcome metric_oracle() {
    nn::Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng() % 100;
        std::vector<int> pred(n), gold(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = static_cast<int>(rng() % 2);
            gold[i] = static_cast<int>(rng() % 2);
        }
        std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (pred[i] == 1 && gold[i] == 1) ++tp;
            if (pred[i] == 1 && gold[i] == 0) ++fp;
            if (pred[i] == 0 && gold[i] == 1) ++fn;
            if (pred[i] == 0 && gold[i] == 0) ++tn;
        }
        const double p = tp + fp == 0 ? 0.0 : double(tp) / double(tp + fp);
        const double r = tp + fn == 0 ? 0.0 : double(tp) / double(tp + fn);
        const double f1 = p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
        const auto m = harness::metrics_from_predictions(pred, gold);
        if (m.tp != tp || m.fp != fp || m.fn != fn || m.tn != tn || m.precision != p || m.recall != r || m.f1_positive != f1)
            return {false, "mismatch on trial " + std::to_string(trial)};
    }

    // evaluate() on a real model against the same oracle.
    const auto records = fixtures::separable_corpus(40, 31);
    ModelBuilder b;
    b.config.kind = ModelKind::gcn_only;
    b.config.embedding_dim = 6;
    b.config.gcn.d_gcn = 4;
    Model model = b.build(records, 5);
    const auto examples = model.prepare(records);
    const auto pred = harness::predict(model, examples);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        tp += pred[i] == 1 && examples[i].label == 1;
        fp += pred[i] == 1 && examples[i].label == 0;
        fn += pred[i] == 0 && examples[i].label == 1;
    }
    const auto m = harness::evaluate(model, examples);
    if (m.tp != tp || m.fp != fp || m.fn != fn) return {false, "evaluate() counts differ from oracle"};

    const auto worked = harness::metrics_from_predictions(std::vector<int>{1, 1, 1, 0}, std::vector<int>{1, 1, 0, 1});
    if (worked.tp != 2 || worked.fp != 1 || worked.fn != 1 || std::abs(worked.f1_positive - 2.0 / 3.0) > 1e-15)
        return {false, "tp=2 fp=1 fn=1 gave F1=" + fmt("%.17g", worked.f1_positive)};
    return {true, "1000 random pairs bit-identical; evaluate() matches; tp=2/fp=1/fn=1 -> F1=" +
                      fmt("%.17g", worked.f1_positive)};
}

// 4. Optimizer correctness.
Outcome optimizer() {
    auto step = [](double theta, double grad, nn::AdamWConfig cfg) {
        nn::Param p("theta", nn::Matrix(1, 1, theta));
        p.grad[0] = grad;
        nn::OptState state(cfg);
        nn::Param* ptrs[] = {&p};
        nn::adamw_step(ptrs, state);
        return p.value[0];
    };
    nn::AdamWConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.0;
    const double got = step(1.0, 0.5, cfg);
    // Bias-corrected first step: m_hat = g, v_hat = g^2.
    const double hand = 1.0 - 0.01 * 0.5 / (std::sqrt(0.25) + 1e-8);
    cfg.eps = 0.0;
    const double no_eps = step(1.0, 0.5, cfg);
    cfg.eps = 1e-8;
    const double identity = step(1.0, 0.0, cfg);
    const bool pass = std::abs(got - hand) <= 1e-12 && std::abs(got - 0.99) <= 1e-9 && std::abs(no_eps - 0.99) <= 1e-12 &&
                      identity == 1.0;
    return {pass, "theta'=" + fmt("%.17g", got) + " (hand " + fmt("%.17g", hand) + "), eps=0 gives " +
                      fmt("%.17g", no_eps) + ", zero-grad step gives " + fmt("%.17g", identity)};
}

harness::TrainConfig overfit_config() {
    harness::TrainConfig cfg;
    cfg.model.kind = ModelKind::joint;
    cfg.model.encoder = EncoderSource::toy;
    cfg.optimizer.lr = 1e-3;
    cfg.batch_size = 4;
    cfg.seed = 7;
    return cfg;
}

// 5. Overfit capacity. Leaves the trained model in `model` for criterion 10.
Outcome overfit(Model& model) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto records = overfit_fixture();
    auto cfg = overfit_config();
    ModelBuilder b;
    b.config = cfg.model;
    model = b.build(records, cfg.seed);
    const auto examples = model.prepare(records);
    nn::OptState state(cfg.optimizer);
    cfg.epochs = 1;
    double mean_loss = 0.0, f1 = 0.0;
    std::size_t epoch = 0;
    for (; epoch < 200;) {
        cfg.seed = overfit_config().seed + epoch;
        harness::train(cfg, examples, model, state);
        ++epoch;
        mean_loss = 0.0;
        for (const auto& ex : examples) mean_loss += lse_loss(model.predict_logits(ex), ex.label) / double(examples.size());
        f1 = harness::evaluate(model, examples).f1_positive;
        if (f1 == 1.0 && mean_loss < 0.01) break;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {f1 == 1.0 && mean_loss < 0.01 && secs < 120.0,
            "epoch " + std::to_string(epoch) + ": train F1 " + fmt("%.3f", f1) + ", mean loss " + fmt("%.3g", mean_loss) +
                ", " + fmt("%.1f", secs) + " s"};
}

// 6. Synthetic separable task.
Outcome separable() {
    // 50-word vocabulary; the definitor words appear only inside the phrases.
    std::vector<std::string> vocab;
    for (const auto& w : fixtures::filler_words())
        if (w != "is" && w != "as" && vocab.size() < 45) vocab.push_back(w);
    vocab.insert(vocab.end(), {"is", "as", "to"});
    const std::vector<std::string> phrases{"is defined as", "refers to"};
    std::set<std::string> distinct(vocab.begin(), vocab.end());
    distinct.insert({"defined", "refers"});

    nn::Rng rng(6);
    std::vector<corpus::SentenceRecord> data;
    for (std::size_t i = 0; i < 500; ++i) {
        const int label = static_cast<int>(rng() % 2);
        std::vector<std::string> words;
        for (std::size_t k = 0, n = 4 + rng() % 10; k < n; ++k) words.push_back(vocab[rng() % vocab.size()]);
        if (label == 1) {
            std::istringstream ph(phrases[rng() % phrases.size()]);
            const std::size_t at = 1 + rng() % (words.size() - 1);
            std::vector<std::string> pw{std::istream_iterator<std::string>(ph), {}};
            words.insert(words.begin() + static_cast<long>(at), pw.begin(), pw.end());
        }
        std::string text;
        for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
        data.push_back(record("sep#" + std::to_string(i + 1), text, label));
    }
    const std::vector<corpus::SentenceRecord> train(data.begin(), data.begin() + 400), held(data.begin() + 400, data.end());

    harness::TrainConfig cfg;
    cfg.model.kind = ModelKind::gcn_only;
    cfg.model.window = 5;
    cfg.optimizer.lr = 1e-2;
    cfg.epochs = 20;
    cfg.seed = 6;
    ModelBuilder b;
    b.config = cfg.model;
    Model model = b.build(train, cfg.seed);
    harness::train(cfg, model.prepare(train), model);
    const double f1 = harness::evaluate(model, model.prepare(held)).f1_positive;
    return {f1 >= 0.95 && distinct.size() == 50,
            "vocabulary " + std::to_string(distinct.size()) + " words, " + std::to_string(cfg.epochs) +
                " epochs, held-out F1 " + fmt("%.3f", f1) + " (need >= 0.95)"};
}

// 7. Joint advantage probe: label = a AND b, a only in features, b only in tokens.
Outcome joint_advantage() {
    nn::Rng rng(7);
    const std::size_t dim = 16;
    encoder::FeatureStore features(dim);
    auto make = [&](std::size_t n, const std::string& prefix) {
        std::vector<corpus::SentenceRecord> out;
        for (std::size_t i = 0; i < n; ++i) {
            const bool a = rng() % 2 == 0;
            const bool b = rng() % 2 == 0;
            std::string text = fixtures::random_phrase(rng, 2, 5);
            if (b) text += " is defined as";
            text += " " + fixtures::random_phrase(rng, 2, 5) + " .";
            const std::string id = prefix + "#" + std::to_string(i + 1);
            std::vector<double> v(dim);
            for (double& x : v) x = nn::uniform(rng, -0.5, 0.5);
            v[0] = (a ? 1.0 : -1.0) + nn::uniform(rng, -0.1, 0.1);
            features.insert(id, v);
            out.push_back(record(id, text, a && b ? 1 : 0));
        }
        return out;
    };
    const auto train = make(400, "jtrain");
    const auto test = make(200, "jtest");

    auto score = [&](ModelKind kind) {
        harness::TrainConfig cfg;
        cfg.model.kind = kind;
        cfg.model.encoder = EncoderSource::precomputed;
        cfg.optimizer.lr = 1e-3;
        cfg.epochs = 40;
        cfg.seed = 70;
        ModelBuilder b;
        b.config = cfg.model;
        b.features = &features;
        Model model = b.build(train, cfg.seed);
        harness::train(cfg, model.prepare(train), model);
        return harness::evaluate(model, model.prepare(test)).f1_positive;
    };
    const double joint = score(ModelKind::joint);
    const double gcn = score(ModelKind::gcn_only);
    const double enc = score(ModelKind::encoder_only);
    return {joint >= gcn + 0.03 && joint >= enc + 0.03,
            "F1 joint " + fmt("%.3f", joint) + ", gcn_only " + fmt("%.3f", gcn) + ", encoder_only(precomputed) " +
                fmt("%.3f", enc)};
}

// 8. Determinism of the cv command.
Outcome determinism() {
    fixtures::ScopedDir dir("accept");
    fixtures::write_tsv(dir.path / "train.tsv", fixtures::separable_corpus(80, 8));
    fixtures::write_embeddings(dir.path / "vec.txt", fixtures::all_tokens(), 8, 8);
    auto run = [&](const std::string& out, std::size_t jobs) {
        const std::string cmd = std::string(DEFX_CLI_PATH) + " cv --folds 10 --seed 1234 --jobs " + std::to_string(jobs) +
                                " --model joint --train " + (dir.path / "train.tsv").string() + " --embeddings " +
                                (dir.path / "vec.txt").string() +
                                " --embedding_dim 8 --gcn.dim 8 --enc.d_model 8 --enc.ffn_dim 16 --epochs 2 --lr 1e-3 --output " +
                                (dir.path / out).string() + " > /dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) && WEXITSTATUS(status) == 0;
    };
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        return s.str();
    };
    if (!run("a.json", 1) || !run("b.json", 1) || !run("c.json", 4)) return {false, "cv command failed"};
    const auto a = slurp(dir.path / "a.json"), b = slurp(dir.path / "b.json");
    // The jobs setting itself is echoed in the config block; everything else must agree.
    auto without_jobs = [&](const std::string& name) {
        auto j = nlohmann::json::parse(slurp(dir.path / name));
        j["config"].erase("jobs");
        return j.dump();
    };
    const bool parallel_same = without_jobs("a.json") == without_jobs("c.json");
    return {!a.empty() && a == b,
            "two --jobs 1 runs byte-identical (" + std::to_string(a.size()) + " bytes); --jobs 4 " +
                (parallel_same ? "identical apart from the echoed jobs value" : "differs")};
}

// 9. Fold properties.
Outcome fold_properties() {
    struct Case {
        std::size_t n, positives;
    };
    std::string detail;
    for (const Case c : {Case{97, 20}, Case{1000, 463}, Case{1000, 460}}) {
        std::vector<corpus::SentenceRecord> records;
        for (std::size_t i = 0; i < c.n; ++i) records.push_back(record("f#" + std::to_string(i), "x", i < c.positives));
        const double global = double(c.positives) / double(c.n);
        double worst = 0.0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto folds = corpus::make_folds(records, 10, seed);
            std::vector<int> seen(c.n, 0);
            std::size_t lo = c.n, hi = 0;
            for (const auto& f : folds) {
                for (std::size_t i : f.val_indices) ++seen[i];
                if (f.train_indices.size() + f.val_indices.size() != c.n) return {false, "train/val do not cover data"};
                lo = std::min(lo, f.val_indices.size());
                hi = std::max(hi, f.val_indices.size());
                worst = std::max(worst, std::abs(corpus::positive_rate(records, f.val_indices) - global));
            }
            if (!std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }))
                return {false, "not a partition at n=" + std::to_string(c.n)};
            if (hi - lo > 1) return {false, "fold sizes differ by more than one at n=" + std::to_string(c.n)};
        }
        if (worst > 0.02) return {false, "stratification off by " + fmt("%.4f", worst) + " at n=" + std::to_string(c.n)};
        detail += "n=" + std::to_string(c.n) + "/pos=" + std::to_string(c.positives) + " max dev " +
                  fmt("%.2f", worst * 100) + "pp; ";
    }
    return {true, detail + "20 seeds each"};
}

// 10. Error-analysis contract on the overfit fixture.
Outcome error_contract(Model& model) {
    const auto records = overfit_fixture();
    const auto examples = model.prepare(records);
    const auto rows = harness::error_analysis(model, examples, examples.size());
    if (rows.size() != examples.size()) return {false, "row count " + std::to_string(rows.size())};

    // Independent procedure: recompute every loss, stable-sort descending.
    std::vector<std::pair<double, std::string>> expected;
    for (const auto& ex : examples) expected.emplace_back(lse_loss(model.predict_logits(ex), ex.label), ex.id);
    std::stable_sort(expected.begin(), expected.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    double worst = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i > 0 && rows[i].loss > rows[i - 1].loss) return {false, "rows not sorted at rank " + std::to_string(i + 1)};
        if (rows[i].rank != i + 1) return {false, "rank numbering broken"};
        if (rows[i].id != expected[i].second) return {false, "order differs at rank " + std::to_string(i + 1)};
        worst = std::max(worst, std::abs(rows[i].loss - expected[i].first));
    }
    return {worst <= 1e-12, std::to_string(rows.size()) + " rows sorted; max |loss - recomputed| " + fmt("%.3g", worst)};
}

} // namespace

int main() {
    int failures = 0;
    auto report = [&](int n, const std::string& name, const std::function<Outcome()>& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failures;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << name << "): " << o.detail << " ["
                  << fmt("%.1f", secs) << " s]" << std::endl;
        return o.pass;
    };
    Model overfit_model;
    report(1, "gradient fidelity", [] {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o = gradient_fidelity();
        if (std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= 60.0) {
            o.pass = false;
            o.detail += "; exceeded 60 s";
        }
        return o;
    });
    report(2, "graph oracle", graph_oracle);
    report(3, "metric oracle", metric_oracle);
    report(4, "optimizer step", optimizer);
    const bool trained = report(5, "overfit capacity", [&] { return overfit(overfit_model); });
    report(6, "separable task", separable);
    report(7, "joint advantage", joint_advantage);
    report(8, "cv determinism", determinism);
    report(9, "fold properties", fold_properties);
    report(10, "error analysis", [&]() -> Outcome {
        if (overfit_model.params().empty()) return {false, "overfit model unavailable"};
        Outcome o = error_contract(overfit_model);
        if (!trained) o.detail += " (overfit target not reached)";
        return o;
    });
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
