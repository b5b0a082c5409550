#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "mat/chem/smiles.hpp"
#include "mat/featurize.hpp"
#include "mat/model.hpp"
#include "mat/rng.hpp"

using namespace mat;

namespace {

// Independent reference for standard multi-head attention: per head
// softmax(Q K^T / sqrt(dk)) V, heads concatenated, output projection.
// Plain loops, no tape, no masking.
std::vector<double> vanilla_mha(const std::vector<double>& x, std::size_t n,
                                const Params& p, const MatConfig& cfg, std::size_t layer) {
    const std::size_t d = cfg.d_model, dk = cfg.d_k();
    auto matmul = [](const std::vector<double>& a, std::size_t ar, std::size_t ac,
                     const std::vector<double>& b, std::size_t bc) {
        std::vector<double> c(ar * bc, 0.0);
        for (std::size_t i = 0; i < ar; ++i)
            for (std::size_t k = 0; k < ac; ++k)
                for (std::size_t j = 0; j < bc; ++j)
                    c[i * bc + j] += a[i * ac + k] * b[k * bc + j];
        return c;
    };
    std::vector<double> concat(n * d, 0.0);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const auto& wq = p.at(attn_param(layer, h, "wq")).data;
        const auto& wk = p.at(attn_param(layer, h, "wk")).data;
        const auto& wv = p.at(attn_param(layer, h, "wv")).data;
        auto q = matmul(x, n, d, wq, dk);
        auto k = matmul(x, n, d, wk, dk);
        auto v = matmul(x, n, d, wv, dk);
        std::vector<double> scores(n * n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t t = 0; t < dk; ++t) acc += q[i * dk + t] * k[j * dk + t];
                scores[i * n + j] = acc / std::sqrt(static_cast<double>(dk));
            }
        for (std::size_t i = 0; i < n; ++i) {
            double mx = scores[i * n];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, scores[i * n + j]);
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                scores[i * n + j] = std::exp(scores[i * n + j] - mx);
                z += scores[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) scores[i * n + j] /= z;
        }
        auto head = matmul(scores, n, n, v, dk);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t t = 0; t < dk; ++t) concat[i * d + h * dk + t] = head[i * dk + t];
    }
    return matmul(concat, n, d, p.at(layer_param(layer, "attn.wo")).data, d);
}

MolTensors random_geometry_tensors(const char* smiles, Rng& rng, bool dummy) {
    Molecule mol = parse_smiles(smiles);
    for (Atom& a : mol.atoms)
        a.position = Vec3{rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)};
    return featurize_molecule(mol, dummy, DistanceFallback::Error);
}

}  // namespace

TEST_CASE("lambda (1,0,0) reduces to vanilla attention") {
    MatConfig cfg;
    cfg.d_model = 24;
    cfg.n_heads = 3;
    cfg.n_layers = 1;
    cfg.lambda_a = 1.0;
    cfg.lambda_d = 0.0;
    cfg.lambda_g = 0.0;

    Rng rng(101, RngStream::Init);
    Params p = init_params(cfg, rng);

    Rng xr(55, RngStream::Data);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 2 + xr.uniform_index(7);
        Tensor h(n, cfg.d_model);
        for (double& v : h.data) v = xr.uniform(-2.0, 2.0);

        Tape tape;
        BoundParams bp(tape, p);
        AttentionInputs in;
        std::vector<std::uint8_t> mask(n, 1);
        in.mask = &mask;
        ValueId hid = tape.constant(h);
        ValueId out = molecule_attention(tape, hid, in, bp, cfg, 0, nullptr);

        const auto ref = vanilla_mha(h.data, n, p, cfg, 0);
        REQUIRE(ref.size() == tape.val(out).data.size());
        for (std::size_t i = 0; i < ref.size(); ++i)
            REQUIRE(tape.val(out).data[i] == Catch::Approx(ref[i]).margin(1e-12));
    }
}

TEST_CASE("pure adjacency attention routes the neighbor's values") {
    // 2-node path graph: A = [[0,1],[1,0]] is its own row normalization, so
    // with lambda = (0,0,1) the head output is V of the other node
    MatConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 1;
    cfg.n_layers = 1;
    cfg.lambda_a = 0.0;
    cfg.lambda_d = 0.0;
    cfg.lambda_g = 1.0;

    Rng rng(7, RngStream::Init);
    Params p = init_params(cfg, rng);

    Tensor h(2, cfg.d_model);
    Rng xr(3, RngStream::Data);
    for (double& v : h.data) v = xr.uniform(-1.0, 1.0);

    Tensor adj = Tensor::matrix(2, 2, {0, 1, 1, 0});
    std::vector<std::uint8_t> mask{1, 1};

    Tape tape;
    BoundParams bp(tape, p);
    AttentionInputs in;
    in.graph_const = adj;  // already row-stochastic
    in.mask = &mask;
    ValueId hid = tape.constant(h);
    ValueId out = molecule_attention(tape, hid, in, bp, cfg, 0, nullptr);

    // expected: swap rows of V, then apply wo
    const auto& wv = p.at(attn_param(0, 0, "wv")).data;
    const auto& wo = p.at(layer_param(0, "attn.wo")).data;
    const std::size_t d = cfg.d_model;
    std::vector<double> v(2 * d, 0.0);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < d; ++k)
            for (std::size_t j = 0; j < d; ++j)
                v[i * d + j] += h.data[i * d + k] * wv[k * d + j];
    std::vector<double> expect(2 * d, 0.0);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < d; ++k)
            for (std::size_t j = 0; j < d; ++j)
                expect[i * d + j] += v[(1 - i) * d + k] * wo[k * d + j];
    for (std::size_t i = 0; i < expect.size(); ++i)
        REQUIRE(tape.val(out).data[i] == Catch::Approx(expect[i]).margin(1e-12));
}

TEST_CASE("init determinism and the glorot bound") {
    MatConfig cfg;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    Rng r1(123, RngStream::Init);
    Rng r2(123, RngStream::Init);
    Params a = init_params(cfg, r1);
    Params b = init_params(cfg, r2);
    REQUIRE(a.values.size() == b.values.size());
    for (const auto& [name, t] : a.values) REQUIRE(t.data == b.at(name).data);

    // gamma starts at 1, biases at 0
    for (double v : a.at("enc0.ln1.gamma").data) CHECK(v == 1.0);
    for (double v : a.at("embed.b").data) CHECK(v == 0.0);

    // empirical max |w| within the glorot bound on a large matrix
    MatConfig big;
    big.d_model = 1024;
    big.n_heads = 16;
    big.n_layers = 1;
    Rng r3(9, RngStream::Init);
    Params pb = init_params(big, r3);
    const Tensor& w = pb.at("enc0.ff0.w");
    const double bound = std::sqrt(6.0 / (1024.0 + 1024.0));
    double max_abs = 0.0;
    for (double v : w.data) max_abs = std::max(max_abs, std::abs(v));
    CHECK(max_abs <= bound);
    CHECK(max_abs > 0.9 * bound);  // bound is actually approached
}

TEST_CASE("forward is invariant to atom permutation") {
    MatConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 4;
    cfg.n_layers = 2;
    cfg.kernel = DistanceKernelKind::Exp;
    Rng rng(2, RngStream::Init);
    Params p = init_params(cfg, rng);

    Rng geo(19, RngStream::Data);
    Molecule mol = parse_smiles("CC(=O)c1ccc(S)cc1");
    for (Atom& a : mol.atoms)
        a.position = Vec3{geo.uniform(-4, 4), geo.uniform(-4, 4), geo.uniform(-4, 4)};

    MolTensors base = featurize_molecule(mol, true, DistanceFallback::Error);
    const double expected = predict_single(base, p, cfg);

    for (int trial = 0; trial < 5; ++trial) {
        std::vector<std::size_t> perm(mol.atoms.size());
        std::iota(perm.begin(), perm.end(), 0);
        geo.shuffle(perm);
        std::vector<std::size_t> inv(perm.size());
        for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
        Molecule pm;
        pm.source_id = mol.source_id;
        pm.atoms.resize(mol.atoms.size());
        for (std::size_t i = 0; i < perm.size(); ++i) pm.atoms[i] = mol.atoms[perm[i]];
        for (const Bond& b : mol.bonds) {
            Bond nb = b;
            nb.a = inv[b.a];
            nb.b = inv[b.b];
            pm.bonds.push_back(nb);
        }
        MolTensors mt = featurize_molecule(pm, true, DistanceFallback::Error);
        CHECK(predict_single(mt, p, cfg) == Catch::Approx(expected).margin(1e-9));
    }
}

TEST_CASE("forward is invariant to padding") {
    MatConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    Rng rng(4, RngStream::Init);
    Params p = init_params(cfg, rng);

    Rng geo(21, RngStream::Data);
    MolTensors mt = random_geometry_tensors("CCOC(=O)CC", geo, true);
    const double expected = predict_single(mt, p, cfg);
    for (std::size_t pad : {1u, 3u, 8u}) {
        MolTensors padded = pad_mol(mt, mt.n_nodes() + pad);
        CHECK(predict_single(padded, p, cfg) == Catch::Approx(expected).margin(1e-9));
    }
}

TEST_CASE("zero encoder layers degenerate to head(pool(embed))") {
    MatConfig cfg;
    cfg.d_model = 12;
    cfg.n_heads = 2;
    cfg.n_layers = 0;
    Rng rng(6, RngStream::Init);
    Params p = init_params(cfg, rng);

    Rng geo(8, RngStream::Data);
    MolTensors mt = random_geometry_tensors("CCO", geo, false);
    const double got = predict_single(mt, p, cfg);

    // hand computation
    const auto& we = p.at("embed.w").data;
    const auto& head_w = p.at("head.w").data;
    std::vector<double> pooled(cfg.d_model, 0.0);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < cfg.d_model; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < kFeatureDim; ++k)
                acc += mt.features.at(i, k) * we[k * cfg.d_model + j];
            pooled[j] += acc / 3.0;
        }
    double expect = 0.0;
    for (std::size_t j = 0; j < cfg.d_model; ++j) expect += pooled[j] * head_w[j];
    CHECK(got == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("composite rows are stochastic when lambdas sum to 1 (softmax kernel)") {
    MatConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 2;
    cfg.lambda_a = 0.4;
    cfg.lambda_d = 0.35;
    cfg.lambda_g = 0.25;
    cfg.kernel = DistanceKernelKind::SoftmaxRows;
    Rng rng(12, RngStream::Init);
    Params p = init_params(cfg, rng);

    Rng geo(14, RngStream::Data);
    MolTensors mt = random_geometry_tensors("c1ccccc1CCN", geo, false);  // all bonded
    AttentionRecord rec;
    predict_single(mt, p, cfg, &rec);
    for (std::size_t l = 0; l < rec.layers; ++l)
        for (std::size_t h = 0; h < rec.heads; ++h)
            for (std::size_t i = 0; i < rec.n; ++i) {
                double sum = 0.0;
                for (std::size_t j = 0; j < rec.n; ++j)
                    sum += rec.composite[l][h][i * rec.n + j];
                REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
            }
}

TEST_CASE("dummy node is reachable only through the softmax term (exp kernel)") {
    MatConfig cfg;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.kernel = DistanceKernelKind::Exp;
    Rng rng(3, RngStream::Init);
    Params p = init_params(cfg, rng);

    Rng geo(31, RngStream::Data);
    MolTensors mt = random_geometry_tensors("CCOCC", geo, true);
    AttentionRecord rec;
    predict_single(mt, p, cfg, &rec);
    const std::size_t dummy = mt.dummy_index();
    for (std::size_t h = 0; h < rec.heads; ++h) {
        for (std::size_t i = 0; i < rec.n; ++i) {
            // adjacency addend never touches the dummy
            CHECK(rec.adjacency_term[0][h][i * rec.n + dummy] == 0.0);
            CHECK(rec.adjacency_term[0][h][dummy * rec.n + i] == 0.0);
            // distance addend is suppressed below representability
            CHECK(rec.distance_term[0][h][i * rec.n + dummy] < 1e-300);
            // whatever weight remains is exactly the softmax term
            const double composite = rec.composite[0][h][i * rec.n + dummy];
            const double soft = rec.softmax_term[0][h][i * rec.n + dummy];
            CHECK(composite == Catch::Approx(soft).margin(1e-15));
        }
    }
}

TEST_CASE("non-finite attention fails fast with layer and head") {
    MatConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    Rng rng(5, RngStream::Init);
    Params p = init_params(cfg, rng);

    Rng geo(41, RngStream::Data);
    MolTensors mt = random_geometry_tensors("CCC", geo, false);
    mt.features.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_WITH(predict_single(mt, p, cfg),
                        Catch::Matchers::ContainsSubstring("layer 0"));
}

TEST_CASE("pretrained-scale configuration runs a forward pass") {
    MatConfig cfg;
    cfg.d_model = 1024;
    cfg.n_layers = 8;
    cfg.n_heads = 16;
    cfg.n_pff = 1;
    cfg.lambda_a = 0.33;
    cfg.lambda_d = 0.33;
    cfg.lambda_g = 0.33;
    cfg.kernel = DistanceKernelKind::Exp;
    Rng rng(1, RngStream::Init);
    Params p = init_params(cfg, rng);

    // a 30-atom molecule
    Rng geo(2, RngStream::Data);
    Molecule mol = parse_smiles("CCCCCCCCCCc1ccc(cc1)C(=O)NCCCCCCCCCCN");
    REQUIRE(mol.atoms.size() == 30);
    for (Atom& a : mol.atoms)
        a.position = Vec3{geo.uniform(-8, 8), geo.uniform(-8, 8), geo.uniform(-8, 8)};
    MolTensors mt = featurize_molecule(mol, true, DistanceFallback::Error);
    const double pred = predict_single(mt, p, cfg);
    CHECK(std::isfinite(pred));
}

TEST_CASE("edge-feature variant matches the standalone edge map") {
    MatConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.n_layers = 1;
    cfg.lambda_a = 0.0;
    cfg.lambda_d = 0.0;
    cfg.lambda_g = 1.0;
    cfg.adjacency_source = AdjacencySource::EdgeFeatures;
    Rng rng(10, RngStream::Init);
    Params p = init_params(cfg, rng);

    Rng geo(11, RngStream::Data);
    Molecule mol = parse_smiles("C=CC(=O)O");
    for (Atom& a : mol.atoms)
        a.position = Vec3{geo.uniform(-3, 3), geo.uniform(-3, 3), geo.uniform(-3, 3)};
    MolTensors mt = featurize_molecule(mol, false, DistanceFallback::Error, true);

    AttentionRecord rec;
    predict_single(mt, p, cfg, &rec);

    EdgeMap map;
    for (std::size_t k = 0; k < kBondFeatureDim; ++k) map.w[k] = p.at("edge.w").data[k];
    map.b = p.at("edge.b").data[0];
    Tensor e = edge_feature_matrix(mol, map);
    for (std::size_t i = 0; i < rec.n; ++i)
        for (std::size_t j = 0; j < rec.n; ++j)
            CHECK(rec.adjacency_term[0][0][i * rec.n + j] ==
                  Catch::Approx(e.at(i, j)).margin(1e-12));
}
