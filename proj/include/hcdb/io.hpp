#pragma once

// Study files, JSON encodings of datasets and priors, and flat tables.
//
// Study file: comma-separated, header "section,id,events,size". Sections are
// "historical", "control" (exactly one row) and "treatment" (arm order is
// file order). Blank lines and lines starting with '#' are skipped.

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hcdb/errors.hpp"
#include "hcdb/mixture.hpp"
#include "hcdb/model.hpp"

namespace hcdb {

using json = nlohmann::ordered_json;

struct StudyData {
    std::vector<std::string> historical_ids;
    HistoricalControlSet historical;
    bool has_current = false;
    std::string control_id;
    std::vector<std::string> treatment_ids;
    CurrentTrial trial;

    friend bool operator==(const StudyData&, const StudyData&) = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline int parse_count(const std::string& s, const std::string& where, const char* what) {
    try {
        std::size_t used = 0;
        const long v = std::stol(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        if (v < 0 || v > 100000000) throw std::out_of_range(s);
        return static_cast<int>(v);
    } catch (const std::exception&) {
        throw InputError(where + ": " + what + " must be a non-negative integer, got '" + s + "'");
    }
}

}  // namespace detail

inline StudyData parse_study_stream(std::istream& in, const std::string& source, bool require_current = true) {
    StudyData out;
    std::set<std::string> hist_ids, arm_ids;
    bool header_seen = false;
    bool control_seen = false;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = source + ":" + std::to_string(line_no);
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto cells = detail::split_csv_row(t);
        if (!header_seen) {
            for (auto& c : cells) {
                for (auto& ch : c) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            }
            if (cells != std::vector<std::string>{"section", "id", "events", "size"}) {
                throw InputError(where + ": expected header 'section,id,events,size'");
            }
            header_seen = true;
            continue;
        }
        if (cells.size() != 4) {
            throw InputError(where + ": expected 4 fields, got " + std::to_string(cells.size()));
        }
        const std::string& section = cells[0];
        const std::string& id = cells[1];
        if (id.empty()) throw InputError(where + ": empty id");
        const ControlGroup g{detail::parse_count(cells[2], where, "events"),
                             detail::parse_count(cells[3], where, "size")};
        if (g.size < 1) throw InputError(where + ": size must be >= 1 (row '" + id + "')");
        if (g.events > g.size) {
            throw InputError(where + ": events > size in row '" + id + "' (" + cells[2] + " > " + cells[3] + ")");
        }
        if (section == "historical") {
            if (!hist_ids.insert(id).second) throw InputError(where + ": duplicate historical id '" + id + "'");
            out.historical_ids.push_back(id);
            out.historical.groups.push_back(g);
        } else if (section == "control") {
            if (control_seen) throw InputError(where + ": more than one control row");
            if (!arm_ids.insert(id).second) throw InputError(where + ": duplicate arm id '" + id + "'");
            control_seen = true;
            out.control_id = id;
            out.trial.control = g;
        } else if (section == "treatment") {
            if (!arm_ids.insert(id).second) throw InputError(where + ": duplicate arm id '" + id + "'");
            out.treatment_ids.push_back(id);
            out.trial.treatments.push_back(g);
        } else {
            throw InputError(where + ": unknown section '" + section + "'");
        }
    }
    if (!header_seen) throw InputError(source + ": empty file");
    if (out.historical.groups.empty()) throw InputError(source + ": no historical rows");
    out.has_current = control_seen || !out.treatment_ids.empty();
    if (require_current || out.has_current) {
        if (!control_seen) throw InputError(source + ": missing control row");
        if (out.treatment_ids.empty()) throw InputError(source + ": at least one treatment arm is required");
        out.has_current = true;
    }
    return out;
}

inline StudyData parse_study_file(const std::string& path, bool require_current = true) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    return parse_study_stream(in, path, require_current);
}

inline void write_study_csv(std::ostream& os, const StudyData& d) {
    os << "section,id,events,size\n";
    for (std::size_t h = 0; h < d.historical.groups.size(); ++h) {
        os << "historical," << d.historical_ids[h] << ',' << d.historical.groups[h].events << ','
           << d.historical.groups[h].size << '\n';
    }
    if (!d.has_current) return;
    os << "control," << d.control_id << ',' << d.trial.control.events << ',' << d.trial.control.size << '\n';
    for (std::size_t m = 0; m < d.trial.treatments.size(); ++m) {
        os << "treatment," << d.treatment_ids[m] << ',' << d.trial.treatments[m].events << ','
           << d.trial.treatments[m].size << '\n';
    }
}

// ---------------------------------------------------------------------------
// JSON

inline json group_to_json(const std::string& id, const ControlGroup& g) {
    return json{{"id", id}, {"events", g.events}, {"size", g.size}};
}

inline json study_to_json(const StudyData& d) {
    json j;
    j["historical"] = json::array();
    for (std::size_t h = 0; h < d.historical.groups.size(); ++h) {
        j["historical"].push_back(group_to_json(d.historical_ids[h], d.historical.groups[h]));
    }
    if (d.has_current) {
        j["control"] = group_to_json(d.control_id, d.trial.control);
        j["treatments"] = json::array();
        for (std::size_t m = 0; m < d.trial.treatments.size(); ++m) {
            j["treatments"].push_back(group_to_json(d.treatment_ids[m], d.trial.treatments[m]));
        }
    }
    return j;
}

inline StudyData study_from_json(const json& j) {
    // Re-validate through the text parser so both routes share one rule set.
    std::ostringstream os;
    os << "section,id,events,size\n";
    try {
        for (const auto& g : j.at("historical")) {
            os << "historical," << g.at("id").get<std::string>() << ',' << g.at("events").get<int>() << ','
               << g.at("size").get<int>() << '\n';
        }
        const bool current = j.contains("control");
        if (current) {
            const auto& c = j.at("control");
            os << "control," << c.at("id").get<std::string>() << ',' << c.at("events").get<int>() << ','
               << c.at("size").get<int>() << '\n';
            for (const auto& g : j.at("treatments")) {
                os << "treatment," << g.at("id").get<std::string>() << ',' << g.at("events").get<int>() << ','
                   << g.at("size").get<int>() << '\n';
            }
        }
        std::istringstream is(os.str());
        return parse_study_stream(is, "<json>", current);
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed dataset JSON: ") + e.what());
    }
}

inline json mixture_to_json(const BetaMixture& mix) {
    json comps = json::array();
    for (std::size_t k = 0; k < mix.size(); ++k) {
        comps.push_back(json{{"weight", mix.weight(k)}, {"a", mix.component(k).a}, {"b", mix.component(k).b}});
    }
    return comps;
}

// Accepts either a bare component array or an object with "components".
// Weights summing to within 1e-3 of one (rounded tables) are renormalized.
inline BetaMixture mixture_from_json(const json& j) {
    try {
        const json& comps = j.is_array() ? j : j.at("components");
        std::vector<double> w;
        std::vector<BetaComponent> c;
        for (const auto& e : comps) {
            w.push_back(e.at("weight").get<double>());
            c.push_back({e.at("a").get<double>(), e.at("b").get<double>()});
        }
        if (w.empty()) throw InputError("prior has no components");
        double s = 0.0;
        for (double x : w) {
            if (!(x >= 0.0)) throw InputError("prior weights must be non-negative");
            s += x;
        }
        if (std::abs(s - 1.0) > 1e-3) throw InputError("prior weights sum to " + std::to_string(s) + ", not 1");
        for (const auto& bc : c) {
            if (!(bc.a > 0.0) || !(bc.b > 0.0)) throw InputError("prior shapes must be positive");
        }
        return BetaMixture::normalized(std::move(w), std::move(c));
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed prior JSON: ") + e.what());
    }
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InputError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Annex conversion
//
// Regulatory annex tables usually list one row per (study, dose group) with
// columns "study", "dose", "animals", "affected" and a "role" column that is
// "HCD" for historical controls. Dose 0 of the current study is the control,
// other doses are treatment arms in increasing dose order. Rows are mapped to
// the study-file layout above; other columns are ignored.
inline StudyData convert_annex_stream(std::istream& in, const std::string& source) {
    std::string line;
    int line_no = 0;
    std::vector<std::string> header;
    struct Row {
        std::string study;
        double dose;
        ControlGroup g;
        bool historical;
    };
    std::vector<Row> current;
    std::ostringstream os;
    os << "section,id,events,size\n";
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto cells = detail::split_csv_row(t);
        if (header.empty()) {
            header = cells;
            continue;
        }
        auto col = [&](const char* name) -> const std::string& {
            for (std::size_t i = 0; i < header.size(); ++i) {
                if (header[i] == name && i < cells.size()) return cells[i];
            }
            throw InputError(source + ":" + std::to_string(line_no) + ": missing column '" + name + "'");
        };
        const std::string where = source + ":" + std::to_string(line_no);
        if (col("role") == "HCD") {
            os << "historical," << col("study") << ',' << col("affected") << ',' << col("animals") << '\n';
        } else {
            double dose = 0.0;
            try {
                dose = std::stod(col("dose"));
            } catch (const std::exception&) {
                throw InputError(where + ": bad dose '" + col("dose") + "'");
            }
            current.push_back({col("study") + "@" + col("dose"), dose,
                               {detail::parse_count(col("affected"), where, "affected"),
                                detail::parse_count(col("animals"), where, "animals")},
                               false});
        }
    }
    std::stable_sort(current.begin(), current.end(), [](const Row& x, const Row& y) { return x.dose < y.dose; });
    for (const auto& r : current) {
        os << (r.dose == 0.0 ? "control," : "treatment,") << r.study << ',' << r.g.events << ',' << r.g.size << '\n';
    }
    std::istringstream is(os.str());
    return parse_study_stream(is, source, !current.empty());
}

}  // namespace hcdb
