#include "hcrl/hierarchy.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace hcrl;

namespace {

// root + `leaves` children, depth 2, unit Gaussians, sticks at (a,b)
Hierarchy fan_tree(int leaves, double a = 1.0, double b = 1.0) {
    Hierarchy t = Hierarchy::single_path(2, 2, b);
    t.node(t.full_path_ids().front()).a = a;
    t.node(t.full_path_ids().front()).b = b;
    for (int i = 1; i < leaves; ++i)
        t.add_child(t.root_id(), Vec::Zero(2), Vec::Ones(2), a, b);
    return t;
}

std::map<int, double> leaf_mass_map(const Hierarchy &t, const std::vector<double> &w) {
    auto fulls = t.full_path_ids();
    REQUIRE(fulls.size() == w.size());
    std::map<int, double> m;
    for (std::size_t i = 0; i < fulls.size(); ++i)
        m[fulls[i]] = w[i];
    return m;
}

} // namespace

TEST_CASE("stick weights") {
    Vec v(3);
    v << 0.5, 0.5, 0.5;
    Vec pi = stick_weights(v);
    CHECK(pi[0] == Catch::Approx(0.5));
    CHECK(pi[1] == Catch::Approx(0.25));
    CHECK(pi[2] == Catch::Approx(0.125));

    Vec w(2);
    w << 1.0, 0.7;
    Vec pw = stick_weights(w);
    CHECK(pw[0] == 1.0);
    CHECK(pw[1] == 0.0);

    Vec u(2);
    u << 0.3, 0.6;
    Vec pu = stick_weights(u);
    CHECK(pu[0] == Catch::Approx(0.3));
    CHECK(pu[1] == Catch::Approx(0.42));

    Vec bad(1);
    bad << 1.2;
    CHECK_THROWS_AS(stick_weights(bad), invalid_input);
}

TEST_CASE("stick weights are nonnegative with partial sums <= 1") {
    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        Vec v(5);
        for (int i = 0; i < 5; ++i)
            v[i] = rng.uniform();
        Vec pi = stick_weights(v);
        double cum = 0.0;
        for (int i = 0; i < 5; ++i) {
            CHECK(pi[i] >= 0.0);
            cum += pi[i];
            CHECK(cum <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("expected log path prior: one stick level, first child") {
    auto t = fan_tree(1, 1.0, 1.0);
    // psi(1) - psi(2) = -1 by the digamma recurrence
    CHECK(expected_log_path_prior(t, PathId{1, 1}) == Catch::Approx(-1.0).margin(1e-12));
}

TEST_CASE("expected log path prior: second child pays the elder sibling") {
    auto t = fan_tree(2, 1.0, 1.0);
    // E[log(1-v_1)] + E[log v_2] = -1 + -1
    CHECK(expected_log_path_prior(t, PathId{1, 2}) == Catch::Approx(-2.0).margin(1e-12));
}

TEST_CASE("expected log path prior: point-mass stick of the first child") {
    auto t = fan_tree(1, 1e9, 1.0);
    CHECK(expected_log_path_prior(t, PathId{1, 1}) == Catch::Approx(0.0).margin(1e-8));
}

TEST_CASE("expected log path prior is negative and additive over segments") {
    Rng rng(77);
    Hierarchy t = Hierarchy::single_path(3, 2, 1.0);
    int mid = t.node(t.full_path_ids().front()).parent;
    t.add_child(mid, Vec::Zero(2), Vec::Ones(2), 1.3, 0.8);
    for (int id : t.all_ids()) {
        t.node(id).a = rng.uniform(0.5, 3.0);
        t.node(id).b = rng.uniform(0.5, 3.0);
    }
    for (int leaf : t.full_path_ids()) {
        double full = expected_log_path_prior(t, leaf);
        CHECK(full < 0.0);
        // additivity: full prior = prior of the inner prefix + the leaf's own factors
        auto chain = t.path_nodes(leaf);
        double prefix = expected_log_path_prior(t, chain[chain.size() - 2]);
        const TreeNode &n = t.node(leaf);
        double leaf_part = n.expect_log_v();
        for (int s : t.node(n.parent).children) {
            if (s == leaf)
                break;
            leaf_part += t.node(s).expect_log_1mv();
        }
        CHECK(full == Catch::Approx(prefix + leaf_part).margin(1e-12));
    }
}

TEST_CASE("unknown paths are rejected") {
    auto t = fan_tree(2);
    CHECK_THROWS_AS(expected_log_path_prior(t, PathId{1, 3}), invalid_input);
    CHECK_THROWS_AS(t.resolve(PathId{2}), invalid_input);
}

TEST_CASE("grow never extends a full path") {
    auto t = fan_tree(1);
    auto mass = complete_path_mass(t, leaf_mass_map(t, {5.0}));
    mass[t.root_id()] = 0.0; // all mass on the single full path
    Rng rng(1);
    std::size_t before = t.node_count();
    CHECK_FALSE(grow(t, mass, 1.0, rng));
    CHECK(t.node_count() == before);
}

TEST_CASE("grow on a forced inner path appends exactly one leaf chain") {
    auto t = fan_tree(1);
    std::map<int, double> mass;
    mass[t.root_id()] = 1.0;
    for (int leaf : t.full_path_ids())
        mass[leaf] = 0.0;
    Rng rng(2);
    CHECK(grow(t, mass, 1.0, rng));
    t.validate();
    CHECK(t.full_path_ids().size() == 2);
    // new node initialized inside the parent region with halved variance
    int grown = t.full_path_ids().back();
    CHECK(t.node(grown).sigma2[0] == Catch::Approx(0.5 * t.node(t.root_id()).sigma2[0]));
    CHECK(t.node(grown).a == 1.0);
}

TEST_CASE("grow samples terminals proportional to mass") {
    // pool: inner root carries 4, leaves carry 3 and 1 (total 8):
    // growth fires exactly when the root is drawn, so expect 1/2
    auto proto = fan_tree(2);
    Rng rng(12345);
    int grew = 0;
    const int trials = 10000;
    for (int i = 0; i < trials; ++i) {
        Hierarchy t = proto;
        auto mass = complete_path_mass(t, leaf_mass_map(t, {3.0, 1.0}));
        if (grow(t, mass, 1.0, rng))
            ++grew;
    }
    CHECK(std::abs(grew / static_cast<double>(trials) - 0.5) < 0.02);
}

TEST_CASE("prune removes the qualifying minor path") {
    auto t = fan_tree(2);
    auto mass = complete_path_mass(t, leaf_mass_map(t, {0.99, 0.01}));
    int minor = t.full_path_ids()[1];
    Rng rng(3);
    CHECK(prune(t, mass, 0.05, rng));
    t.validate();
    auto fulls = t.full_path_ids();
    CHECK(fulls.size() == 1);
    CHECK(std::find(fulls.begin(), fulls.end(), minor) == fulls.end());
}

TEST_CASE("prune leaves the tree alone when nothing qualifies") {
    auto t = fan_tree(2);
    auto mass = complete_path_mass(t, leaf_mass_map(t, {0.6, 0.4}));
    Rng rng(4);
    CHECK_FALSE(prune(t, mass, 0.05, rng));
    CHECK(t.full_path_ids().size() == 2);
}

TEST_CASE("prune cascades through a childless internal node") {
    Hierarchy t = Hierarchy::single_path(3, 2, 1.0);
    t.add_child(t.root_id(), Vec::Zero(2), Vec::Ones(2), 1.0, 1.0);
    int mid2 = t.full_path_ids()[0]; // the added child is at level 2; extend it
    mid2 = t.node(t.full_path_ids()[0]).parent; // original mid node
    int added_mid = -1;
    for (int c : t.node(t.root_id()).children)
        if (c != mid2)
            added_mid = c;
    int new_leaf = t.add_child(added_mid, Vec::Zero(2), Vec::Ones(2), 1.0, 1.0);
    t.validate();
    REQUIRE(t.full_path_ids().size() == 2);

    auto mass = complete_path_mass(t, leaf_mass_map(t, {0.999, 0.001}));
    Rng rng(5);
    CHECK(prune(t, mass, 0.01, rng));
    t.validate();
    CHECK(t.full_path_ids().size() == 1);
    // the added middle node lost its only leaf and must be gone too
    CHECK_THROWS_AS(t.node(added_mid), invalid_input);
    CHECK_THROWS_AS(t.node(new_leaf), invalid_input);
}

TEST_CASE("prune never removes the last full path") {
    auto t = fan_tree(1);
    auto mass = complete_path_mass(t, leaf_mass_map(t, {1e-9}));
    Rng rng(6);
    CHECK_FALSE(prune(t, mass, 0.5, rng));
    CHECK(t.full_path_ids().size() == 1);
}

TEST_CASE("merge fires on parallel posteriors and respects the threshold") {
    Rng rng(7);
    {
        auto t = fan_tree(2);
        Mat q(3, 2);
        q << 0.2, 0.2, 0.5, 0.5, 0.3, 0.3; // identical columns, cosine 1
        CHECK(merge(t, q, 0.95, rng));
        t.validate();
        CHECK(t.full_path_ids().size() == 1);
    }
    {
        auto t = fan_tree(2);
        Mat q(2, 2);
        q << 1.0, 0.0, 0.0, 1.0; // orthogonal, cosine 0
        CHECK_FALSE(merge(t, q, 0.5, rng));
        CHECK(t.full_path_ids().size() == 2);
    }
}

TEST_CASE("merge cosine value on the documented example") {
    Rng rng(8);
    Mat q(3, 2);
    q << 1.0, 1.0, 1.0, 0.0, 0.0, 1.0; // q_i=(1,1,0), q_j=(1,0,1) -> J = 1/2
    CHECK(path_cosine(q.col(0), q.col(1)) == Catch::Approx(0.5));
    auto t1 = fan_tree(2);
    CHECK(merge(t1, q, 0.5, rng));
    auto t2 = fan_tree(2);
    CHECK_FALSE(merge(t2, q, 0.50001, rng));
}

TEST_CASE("merge averages parameters by path mass") {
    auto t = fan_tree(2);
    auto fulls = t.full_path_ids();
    t.node(fulls[0]).mu = Vec::Constant(2, 1.0);
    t.node(fulls[1]).mu = Vec::Constant(2, 4.0);
    Mat q(2, 2);
    q << 3.0, 1.0, 3.0, 1.0; // parallel columns; masses 6 and 2
    Rng rng(9);
    CHECK(merge(t, q, 0.9, rng));
    int kept = t.full_path_ids().front();
    CHECK(t.node(kept).mu[0] == Catch::Approx((6.0 * 1.0 + 2.0 * 4.0) / 8.0));
}

TEST_CASE("merge needs at least two full paths") {
    auto t = fan_tree(1);
    Mat q(2, 1);
    q << 1.0, 1.0;
    Rng rng(10);
    CHECK_FALSE(merge(t, q, 0.5, rng));
}

TEST_CASE("random op sequences keep the hierarchy invariants") {
    Rng rng(2024);
    for (int trial = 0; trial < 30; ++trial) {
        int L = 2 + static_cast<int>(rng.index(3)); // depth 2..4
        Hierarchy t = Hierarchy::single_path(L, 2, 1.0);
        for (int step = 0; step < 40; ++step) {
            auto fulls = t.full_path_ids();
            std::map<int, double> leaf_mass;
            for (int leaf : fulls)
                leaf_mass[leaf] = rng.uniform(0.0, 1.0);
            auto mass = complete_path_mass(t, leaf_mass);
            int which = static_cast<int>(rng.index(3));
            if (which == 0) {
                grow(t, mass, 1.0, rng);
            } else if (which == 1) {
                prune(t, mass, 0.2, rng);
            } else {
                Mat q(4, static_cast<Eigen::Index>(fulls.size()));
                for (Eigen::Index r = 0; r < q.rows(); ++r)
                    for (Eigen::Index c = 0; c < q.cols(); ++c)
                        q(r, c) = rng.uniform();
                merge(t, q, 0.97, rng);
            }
            t.validate();
            CHECK(!t.full_path_ids().empty());
            for (int leaf : t.full_path_ids())
                CHECK(t.node(leaf).level == L);
            for (int id : t.all_ids())
                CHECK(static_cast<int>(t.path_nodes(id).size()) == t.node(id).level);
        }
    }
}

TEST_CASE("sibling stick order survives pruning") {
    auto t = fan_tree(3);
    auto fulls = t.full_path_ids();
    // tag by mu so we can recognize survivors
    for (std::size_t i = 0; i < fulls.size(); ++i)
        t.node(fulls[i]).mu = Vec::Constant(2, static_cast<double>(i));
    auto mass = complete_path_mass(t, leaf_mass_map(t, {0.5, 0.001, 0.499}));
    Rng rng(11);
    REQUIRE(prune(t, mass, 0.05, rng));
    auto after = t.full_path_ids();
    REQUIRE(after.size() == 2);
    CHECK(t.node(after[0]).mu[0] == 0.0);
    CHECK(t.node(after[1]).mu[0] == 2.0); // order kept, indices re-packed
    CHECK(t.path_id(after[1]) == PathId{1, 2});
}

TEST_CASE("tree json round trip is byte identical") {
    auto t = fan_tree(3, 1.4, 2.2);
    t.node(t.root_id()).mu << 0.123456789012345, -3.14159;
    auto j1 = t.to_json();
    auto t2 = Hierarchy::from_json(j1);
    auto j2 = t2.to_json();
    CHECK(j1.dump() == j2.dump());
}

TEST_CASE("dot export lists every node and edge") {
    Hierarchy t = Hierarchy::single_path(3, 2, 1.0);
    std::string dot = t.to_dot();
    CHECK(std::count(dot.begin(), dot.end(), '[') == 1 + 3); // node style + 3 labels
    CHECK(dot.find("n0 -> n1") != std::string::npos);
    CHECK(dot.find("n1 -> n2") != std::string::npos);
}
