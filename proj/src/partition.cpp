#include "lmsq/partition.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

namespace lmsq {

VariableGraph build_variable_graph(const Problem& p) {
    VariableGraph g;
    g.n_nodes = p.n_points;
    g.adjacency.assign(p.n_points, {});
    for (const Observation& o : p.observations) {
        int np = o.point_count();
        for (int a = 0; a < np; a++)
            for (int b = a + 1; b < np; b++) {
                g.adjacency[o.points[a]].push_back(o.points[b]);
                g.adjacency[o.points[b]].push_back(o.points[a]);
            }
    }
    for (auto& l : g.adjacency) {
        std::sort(l.begin(), l.end());
        l.erase(std::unique(l.begin(), l.end()), l.end());
        g.n_edges += static_cast<long>(l.size());
    }
    g.n_edges /= 2;
    return g;
}

namespace {

// Working view of a node subset during recursive bisection. pos[v] is the
// index of v in nodes, -1 when v is outside the subset.
struct SubsetView {
    const VariableGraph* g;
    std::vector<int> nodes;
    std::vector<int>* pos;

    void stamp() const {
        for (size_t i = 0; i < nodes.size(); i++) (*pos)[nodes[i]] = static_cast<int>(i);
    }
    void unstamp() const {
        for (int v : nodes) (*pos)[v] = -1;
    }
};

// BFS over the subset from root; neighbors outside the subset are ignored.
// Returns visit order; level[i] is the BFS level of nodes[i].
std::vector<int> bfs_order(const SubsetView& s, int root, std::vector<int>& level) {
    level.assign(s.nodes.size(), -1);
    std::vector<int> order;
    order.reserve(s.nodes.size());
    std::deque<int> q;
    int rp = (*s.pos)[root];
    level[rp] = 0;
    q.push_back(root);
    while (!q.empty()) {
        int v = q.front();
        q.pop_front();
        order.push_back(v);
        int vp = (*s.pos)[v];
        for (int w : s.g->adjacency[v]) {
            int wp = (*s.pos)[w];
            if (wp < 0 || level[wp] >= 0) continue;
            level[wp] = level[vp] + 1;
            q.push_back(w);
        }
    }
    return order;
}

int pseudo_peripheral(const SubsetView& s, int start) {
    std::vector<int> level;
    int root = start;
    int ecc = -1;
    for (int sweep = 0; sweep < 4; sweep++) {
        std::vector<int> order = bfs_order(s, root, level);
        int far = root;
        int far_lvl = 0;
        for (int v : order) {
            int l = level[(*s.pos)[v]];
            if (l > far_lvl || (l == far_lvl && v < far)) {
                far_lvl = l;
                far = v;
            }
        }
        if (far_lvl <= ecc) break;
        ecc = far_lvl;
        root = far;
    }
    return root;
}

// connected components in node-list order
std::vector<std::vector<int>> components(const SubsetView& s) {
    std::vector<char> seen(s.nodes.size(), 0);
    std::vector<std::vector<int>> comps;
    std::vector<int> level;
    for (int v : s.nodes) {
        if (seen[(*s.pos)[v]]) continue;
        std::vector<int> order = bfs_order(s, v, level);
        for (int w : order) seen[(*s.pos)[w]] = 1;
        comps.push_back(std::move(order));
    }
    return comps;
}

// Greedy boundary refinement. side[i] in {0,1} for nodes[i]; moves a node
// only when it strictly reduces the cut and the sizes stay near target_a.
// [min_a, max_a] caps the window so each side keeps room for its sub-parts.
void refine(const SubsetView& s, std::vector<char>& side, long target_a,
            long min_a, long max_a) {
    long size_a = 0;
    for (char c : side) size_a += (c == 0);
    long slack = std::max<long>(1, target_a / 50);
    long lo = std::max(min_a, target_a - slack);
    long hi = std::min(max_a, target_a + slack);
    if (lo > hi) return;

    // gain[i] = cut edges removed by moving nodes[i] to the other side
    std::vector<int> gain(s.nodes.size(), 0);
    auto recompute = [&](int i) {
        int v = s.nodes[i];
        int ext = 0, internal = 0;
        for (int w : s.g->adjacency[v]) {
            int wp = (*s.pos)[w];
            if (wp < 0) continue;
            if (side[wp] != side[i]) ext++;
            else internal++;
        }
        gain[i] = ext - internal;
    };
    for (size_t i = 0; i < s.nodes.size(); i++) recompute(static_cast<int>(i));

    for (int sweep = 0; sweep < 10; sweep++) {
        std::vector<char> moved(s.nodes.size(), 0);
        bool any = false;
        while (true) {
            int best = -1;
            for (size_t i = 0; i < s.nodes.size(); i++) {
                if (moved[i] || gain[i] <= 0) continue;
                // balance: moving from A shrinks size_a, from B grows it
                long na = side[i] == 0 ? size_a - 1 : size_a + 1;
                if (na < lo || na > hi) continue;
                if (best < 0 || gain[i] > gain[best] ||
                    (gain[i] == gain[best] && s.nodes[i] < s.nodes[best]))
                    best = static_cast<int>(i);
            }
            if (best < 0) break;
            side[best] = side[best] == 0 ? 1 : 0;
            size_a += side[best] == 0 ? 1 : -1;
            moved[best] = 1;
            any = true;
            gain[best] = -gain[best];
            for (int w : s.g->adjacency[s.nodes[best]]) {
                int wp = (*s.pos)[w];
                if (wp >= 0) recompute(wp);
            }
        }
        if (!any) break;
    }
}

void bisect(SubsetView s, int kparts, int label_base, std::vector<int>& labels,
            std::uint64_t seed) {
    if (kparts == 1) {
        for (int v : s.nodes) labels[v] = label_base;
        return;
    }
    const long n = static_cast<long>(s.nodes.size());
    int k1 = kparts / 2;
    int k2 = kparts - k1;
    // each side must keep at least as many nodes as parts it will host
    long target_a = std::lround(n * static_cast<double>(k1) / kparts);
    target_a = std::max<long>(k1, std::min<long>(n - k2, target_a));

    s.stamp();
    std::vector<char> side(s.nodes.size(), 1);
    auto comps = components(s);
    if (comps.size() > 1) {
        // keep whole components together where the sizes allow
        std::vector<int> idx(comps.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](int a, int b) {
            if (comps[a].size() != comps[b].size())
                return comps[a].size() > comps[b].size();
            return comps[a][0] < comps[b][0];
        });
        long size_a = 0;
        std::vector<int> in_a;
        for (int ci : idx) {
            if (size_a + static_cast<long>(comps[ci].size()) <= target_a) {
                size_a += static_cast<long>(comps[ci].size());
                for (int v : comps[ci]) side[(*s.pos)[v]] = 0;
            } else {
                in_a.push_back(ci); // candidates for a partial split
            }
        }
        if (size_a < target_a && !in_a.empty()) {
            // top up from the largest leftover component, BFS prefix
            int ci = in_a.front();
            long need = target_a - size_a;
            SubsetView cs{s.g, comps[ci], s.pos};
            cs.stamp(); // switch the shared pos to component-local indices
            std::vector<int> level;
            int root = pseudo_peripheral(cs, comps[ci][0]);
            std::vector<int> order = bfs_order(cs, root, level);
            s.stamp(); // back to subset-local indices for the side flags
            for (long i = 0; i < need && i < static_cast<long>(order.size()); i++)
                side[(*s.pos)[order[i]]] = 0;
        }
    } else {
        int root0 = s.nodes[seed % static_cast<std::uint64_t>(n)];
        int root = pseudo_peripheral(s, root0);
        std::vector<int> level;
        std::vector<int> order = bfs_order(s, root, level);
        for (long i = 0; i < target_a; i++) side[(*s.pos)[order[i]]] = 0;
    }
    refine(s, side, target_a, k1, n - k2);

    std::vector<int> a_nodes, b_nodes;
    for (size_t i = 0; i < s.nodes.size(); i++)
        (side[i] == 0 ? a_nodes : b_nodes).push_back(s.nodes[i]);
    s.unstamp();

    std::vector<int>* pos = s.pos;
    const VariableGraph* g = s.g;
    bisect(SubsetView{g, std::move(a_nodes), pos}, k1, label_base, labels, seed);
    bisect(SubsetView{g, std::move(b_nodes), pos}, k2, label_base + k1, labels, seed);
}

} // namespace

std::vector<int> partition_kway(const VariableGraph& g, int k, std::uint64_t seed) {
    if (k < 1) throw DimensionError("partition_kway: k must be positive");
    if (g.n_nodes == 0) return {};
    if (k > g.n_nodes) throw DimensionError("partition_kway: more subsets than nodes");

    std::vector<int> labels(g.n_nodes, 0);
    if (k == 1) return labels;

    std::vector<int> all(g.n_nodes);
    std::iota(all.begin(), all.end(), 0);
    std::vector<int> pos(g.n_nodes, -1);
    bisect(SubsetView{&g, std::move(all), &pos}, k, 0, labels, seed);
    return labels;
}

Partition classify_residuals(const Problem& p, const std::vector<int>& labels, int k) {
    if (static_cast<int>(labels.size()) != p.n_points)
        throw DimensionError("classify_residuals: label count mismatch");
    Partition part;
    part.k = k;
    part.subset_of_point = labels;
    part.subset_points.assign(k, {});
    part.subset_vars.assign(k, {});
    part.internal_obs.assign(k, {});
    for (int i = 0; i < p.n_points; i++) {
        int s = labels[i];
        if (s < 0 || s >= k) throw DimensionError("classify_residuals: label out of range");
        part.subset_points[s].push_back(i);
        part.subset_vars[s].push_back(2 * i);
        part.subset_vars[s].push_back(2 * i + 1);
    }
    for (int oi = 0; oi < p.n_obs(); oi++) {
        const Observation& o = p.observations[oi];
        int s0 = labels[o.points[0]];
        bool internal = true;
        for (int a = 1; a < o.point_count(); a++)
            if (labels[o.points[a]] != s0) internal = false;
        if (internal) part.internal_obs[s0].push_back(oi);
        else part.coupling_obs.push_back(oi);
    }
    part.row_order.reserve(p.n_obs());
    for (int s = 0; s < k; s++)
        for (int oi : part.internal_obs[s]) part.row_order.push_back(oi);
    for (int oi : part.coupling_obs) part.row_order.push_back(oi);
    part.cut_fraction =
        p.n_obs() == 0 ? 0.0
                       : static_cast<double>(part.coupling_obs.size()) / p.n_obs();
    return part;
}

Partition partition_problem(const Problem& p, int k, std::uint64_t seed) {
    VariableGraph g = build_variable_graph(p);
    std::vector<int> labels = partition_kway(g, k, seed);
    return classify_residuals(p, labels, k);
}

PartitionStats partition_stats(const Problem& p, const std::vector<double>& x,
                               const Partition& part, const VariableGraph& g) {
    PartitionStats st;
    st.k = part.k;
    st.n_edges = g.n_edges;
    for (int v = 0; v < g.n_nodes; v++)
        for (int w : g.adjacency[v])
            if (w > v && part.subset_of_point[v] != part.subset_of_point[w])
                st.cut_edges++;
    st.cut_fraction = part.cut_fraction;
    st.subset_sizes.resize(part.k);
    st.internal_counts.resize(part.k);
    st.subset_objective.assign(part.k, 0.0);
    for (int s = 0; s < part.k; s++) {
        st.subset_sizes[s] = static_cast<int>(part.subset_points[s].size());
        st.internal_counts[s] = static_cast<long>(part.internal_obs[s].size());
        for (int oi : part.internal_obs[s]) {
            double r = raw_residual(p.observations[oi], x.data(), oi) /
                       p.observations[oi].sigma;
            st.subset_objective[s] += 0.5 * r * r;
        }
    }
    st.coupling_count = static_cast<long>(part.coupling_obs.size());
    for (int oi : part.coupling_obs) {
        double r =
            raw_residual(p.observations[oi], x.data(), oi) / p.observations[oi].sigma;
        st.coupling_objective += 0.5 * r * r;
    }
    return st;
}

} // namespace lmsq
