#include "sensopf/feeder.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>

#include <json.hpp>

namespace sensopf {

namespace {

// Parent pointer and edge impedance per bus, derived from a validated feeder.
struct TreeIndex {
    std::vector<int> parent;   // parent[b] for b in 1..N
    std::vector<double> r;     // impedance of the line feeding bus b
    std::vector<double> x;
    std::vector<int> depth;
};

TreeIndex index_tree(const Feeder& f) {
    const int n = f.bus_count;
    TreeIndex t;
    t.parent.assign(n + 1, -1);
    t.r.assign(n + 1, 0.0);
    t.x.assign(n + 1, 0.0);
    t.depth.assign(n + 1, 0);

    std::vector<std::vector<int>> adj(n + 1);  // line indices per bus
    for (int i = 0; i < static_cast<int>(f.lines.size()); ++i) {
        adj[f.lines[i].parent].push_back(i);
        adj[f.lines[i].child].push_back(i);
    }
    std::vector<bool> seen(n + 1, false);
    std::queue<int> frontier;
    frontier.push(0);
    seen[0] = true;
    int visited = 1;
    while (!frontier.empty()) {
        const int bus = frontier.front();
        frontier.pop();
        for (int li : adj[bus]) {
            const Line& ln = f.lines[li];
            const int other = (ln.parent == bus) ? ln.child : ln.parent;
            if (seen[other]) continue;
            seen[other] = true;
            ++visited;
            t.parent[other] = bus;
            t.r[other] = ln.r;
            t.x[other] = ln.x;
            t.depth[other] = t.depth[bus] + 1;
            frontier.push(other);
        }
    }
    if (visited != n + 1) throw NotATree("feeder graph is not connected to the substation");
    return t;
}

int lowest_common_ancestor(const TreeIndex& t, int a, int b) {
    while (a != b) {
        if (t.depth[a] >= t.depth[b]) a = t.parent[a];
        else b = t.parent[b];
    }
    return a;
}

void check_positive_definite(const Matrix& m, const char* name) {
    Eigen::LDLT<Matrix> ldlt(m);
    if (ldlt.info() != Eigen::Success) throw NotPositiveDefinite(std::string(name) + " failed factorization");
    const Vector d = ldlt.vectorD();
    const double floor = 1e-12 * std::max(1.0, d.maxCoeff());
    if (d.minCoeff() <= floor) throw NotPositiveDefinite(std::string(name) + " has a non-positive pivot");
}

}  // namespace

std::string Feeder::bus_id(int index) const {
    if (index < 0 || index > bus_count) throw IndexOutOfRange("bus index out of range");
    if (bus_ids.empty()) return std::to_string(index);
    return bus_ids[static_cast<std::size_t>(index)];
}

void Feeder::validate() const {
    const int n = bus_count;
    if (n < 1) throw InvalidFeeder("feeder needs at least one bus besides the substation");
    if (static_cast<int>(lines.size()) != n)
        throw NotATree("a radial feeder with N buses must have exactly N lines");
    for (const Line& ln : lines) {
        if (ln.parent < 0 || ln.parent > n || ln.child < 0 || ln.child > n || ln.parent == ln.child)
            throw InvalidFeeder("line endpoints out of range");
        if (!(ln.r > 0.0) || !(ln.x > 0.0)) throw NonPositiveImpedance("line impedances must be strictly positive");
    }
    index_tree(*this);  // throws NotATree when disconnected (a cycle elsewhere implies disconnection at N lines)

    std::vector<int> host_inverter(n + 1, 0), host_load(n + 1, 0);
    for (int b : inverter_buses) {
        if (b < 1 || b > n) throw InvalidFeeder("inverter bus out of range");
        if (++host_inverter[b] > 1) throw InvalidFeeder("a bus may host at most one inverter");
    }
    for (int b : load_buses) {
        if (b < 1 || b > n) throw InvalidFeeder("load bus out of range");
        if (++host_load[b] > 1) throw InvalidFeeder("a bus may host at most one load");
    }
    if (inverter_ratings.size() != inverter_count())
        throw InvalidFeeder("one rating per inverter required");
    for (int i = 0; i < inverter_ratings.size(); ++i)
        if (!(inverter_ratings[i] > 0.0)) throw InvalidFeeder("inverter ratings must be strictly positive");
    if (!(voltage_band > 0.0)) throw InvalidFeeder("voltage band must be positive");
    if (!bus_ids.empty() && static_cast<int>(bus_ids.size()) != n + 1)
        throw InvalidFeeder("bus_ids must cover substation plus N buses");
}

GridMatrices build_grid_matrices(const Feeder& feeder) {
    feeder.validate();
    const int n = feeder.bus_count;
    const TreeIndex tree = index_tree(feeder);

    // Cumulative root-path impedance per bus.
    Vector path_r = Vector::Zero(n + 1), path_x = Vector::Zero(n + 1);
    std::vector<int> order;  // buses sorted by depth so parents come first
    order.reserve(n);
    for (int b = 1; b <= n; ++b) order.push_back(b);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return tree.depth[a] < tree.depth[b]; });
    for (int b : order) {
        path_r[b] = path_r[tree.parent[b]] + tree.r[b];
        path_x[b] = path_x[tree.parent[b]] + tree.x[b];
    }

    GridMatrices gm;
    gm.R.resize(n, n);
    gm.X.resize(n, n);
    for (int m = 1; m <= n; ++m) {
        for (int k = m; k <= n; ++k) {
            const int anc = lowest_common_ancestor(tree, m, k);
            gm.R(m - 1, k - 1) = gm.R(k - 1, m - 1) = path_r[anc];
            gm.X(m - 1, k - 1) = gm.X(k - 1, m - 1) = path_x[anc];
        }
    }

    check_positive_definite(gm.R, "R");
    check_positive_definite(gm.X, "X");

    gm.Fi = Matrix::Zero(n, feeder.inverter_count());
    for (int i = 0; i < feeder.inverter_count(); ++i) gm.Fi(feeder.inverter_buses[i] - 1, i) = 1.0;
    gm.Fl = Matrix::Zero(n, feeder.load_count());
    for (int l = 0; l < feeder.load_count(); ++l) gm.Fl(feeder.load_buses[l] - 1, l) = 1.0;
    return gm;
}

Vector approx_voltages(const GridMatrices& gm, const Vector& p, const Vector& q, double v0) {
    if (p.size() != gm.R.rows() || q.size() != gm.X.rows())
        throw DimensionMismatch("injection vectors must have one entry per bus");
    return gm.R * p + gm.X * q + Vector::Constant(gm.R.rows(), v0);
}

double approx_losses(const GridMatrices& gm, const Vector& p, const Vector& q) {
    if (p.size() != gm.R.rows() || q.size() != gm.R.rows())
        throw DimensionMismatch("injection vectors must have one entry per bus");
    return 2.0 * p.dot(gm.R * p) + 2.0 * q.dot(gm.R * q);
}

namespace {

using nlohmann::json;

json parse(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw SchemaError("feeder file is not valid JSON");
    return j;
}

}  // namespace

Feeder feeder_from_json(const std::string& text) {
    const json j = parse(text);
    if (!j.is_object() || !j.contains("buses") || !j.contains("lines"))
        throw SchemaError("feeder JSON needs 'buses' and 'lines'");

    std::vector<std::string> ids;
    for (const auto& b : j.at("buses")) {
        if (!b.contains("id") || !b.at("id").is_string()) throw SchemaError("every bus needs a string id");
        ids.push_back(b.at("id").get<std::string>());
    }
    std::map<std::string, int> position;  // id -> position in file (not yet dense index)
    for (int i = 0; i < static_cast<int>(ids.size()); ++i)
        if (!position.emplace(ids[i], i).second) throw SchemaError("duplicate bus id '" + ids[i] + "'");
    if (!position.count("0")) throw SchemaError("substation bus id '0' missing");
    if (ids.size() < 2) throw SchemaError("feeder needs at least one bus besides the substation");

    struct RawLine { int a, b; double r, x; };
    std::vector<RawLine> raw;
    for (const auto& ln : j.at("lines")) {
        if (!ln.contains("from") || !ln.contains("to") || !ln.contains("r") || !ln.contains("x"))
            throw SchemaError("every line needs from/to/r/x");
        const std::string from = ln.at("from").get<std::string>();
        const std::string to = ln.at("to").get<std::string>();
        if (!position.count(from) || !position.count(to)) throw SchemaError("line references unknown bus");
        raw.push_back({position.at(from), position.at(to),
                       ln.at("r").get<double>(), ln.at("x").get<double>()});
    }
    const int n = static_cast<int>(ids.size()) - 1;
    if (static_cast<int>(raw.size()) != n) throw NotATree("a radial feeder with N buses must have exactly N lines");
    for (const RawLine& ln : raw)
        if (!(ln.r > 0.0) || !(ln.x > 0.0)) throw NonPositiveImpedance("line impedances must be strictly positive");

    // BFS from the substation assigns dense indices 1..N; children are visited
    // in the order their lines appear in the file.
    std::vector<std::vector<int>> adj(ids.size());
    for (int i = 0; i < static_cast<int>(raw.size()); ++i) {
        adj[raw[i].a].push_back(i);
        adj[raw[i].b].push_back(i);
    }
    std::vector<int> dense(ids.size(), -1);
    dense[position.at("0")] = 0;
    std::queue<int> frontier;
    frontier.push(position.at("0"));
    int next_index = 1;
    Feeder f;
    f.bus_count = n;
    f.bus_ids.assign(static_cast<std::size_t>(n) + 1, "");
    f.bus_ids[0] = "0";
    while (!frontier.empty()) {
        const int at = frontier.front();
        frontier.pop();
        for (int li : adj[at]) {
            const RawLine& ln = raw[li];
            const int other = (ln.a == at) ? ln.b : ln.a;
            if (dense[other] >= 0) continue;
            dense[other] = next_index++;
            f.bus_ids[static_cast<std::size_t>(dense[other])] = ids[static_cast<std::size_t>(other)];
            f.lines.push_back({dense[at], dense[other], ln.r, ln.x});
            frontier.push(other);
        }
    }
    if (next_index != n + 1) throw NotATree("feeder graph is not connected to the substation");

    auto dense_of = [&](const std::string& id) {
        auto it = position.find(id);
        if (it == position.end()) throw SchemaError("unknown bus id '" + id + "'");
        const int d = dense[it->second];
        if (d == 0) throw SchemaError("substation cannot host inverters or loads");
        return d;
    };

    std::vector<double> ratings;
    if (j.contains("inverters")) {
        for (const auto& inv : j.at("inverters")) {
            if (!inv.contains("bus") || !inv.contains("q_rating")) throw SchemaError("every inverter needs bus and q_rating");
            f.inverter_buses.push_back(dense_of(inv.at("bus").get<std::string>()));
            ratings.push_back(inv.at("q_rating").get<double>());
        }
    }
    f.inverter_ratings.resize(static_cast<Eigen::Index>(ratings.size()));
    for (std::size_t i = 0; i < ratings.size(); ++i) f.inverter_ratings[static_cast<Eigen::Index>(i)] = ratings[i];
    if (j.contains("loads")) {
        for (const auto& ld : j.at("loads")) {
            if (!ld.contains("bus")) throw SchemaError("every load needs a bus");
            f.load_buses.push_back(dense_of(ld.at("bus").get<std::string>()));
        }
    }
    f.substation_voltage = j.value("v0", 1.0);
    f.voltage_band = j.value("voltage_band", 0.03);
    f.validate();
    return f;
}

std::string feeder_to_json(const Feeder& feeder) {
    json j;
    j["buses"] = json::array();
    for (int b = 0; b <= feeder.bus_count; ++b) j["buses"].push_back({{"id", feeder.bus_id(b)}});
    j["lines"] = json::array();
    for (const Line& ln : feeder.lines)
        j["lines"].push_back({{"from", feeder.bus_id(ln.parent)},
                              {"to", feeder.bus_id(ln.child)},
                              {"r", ln.r},
                              {"x", ln.x}});
    j["inverters"] = json::array();
    for (int i = 0; i < feeder.inverter_count(); ++i)
        j["inverters"].push_back({{"bus", feeder.bus_id(feeder.inverter_buses[i])},
                                  {"q_rating", feeder.inverter_ratings[i]}});
    j["loads"] = json::array();
    for (int b : feeder.load_buses) j["loads"].push_back({{"bus", feeder.bus_id(b)}});
    j["v0"] = feeder.substation_voltage;
    j["voltage_band"] = feeder.voltage_band;
    return j.dump(2);
}

Feeder load_feeder(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open feeder file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return feeder_from_json(buf.str());
}

void save_feeder(const Feeder& feeder, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write feeder file: " + path);
    out << feeder_to_json(feeder) << "\n";
}

}  // namespace sensopf
