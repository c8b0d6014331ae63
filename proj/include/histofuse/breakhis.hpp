#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "histofuse/errors.hpp"
#include "histofuse/rng.hpp"

namespace histofuse {

enum class TumorClass { benign, malignant };

inline const char* tumor_class_token(TumorClass c) { return c == TumorClass::benign ? "B" : "M"; }

/// Subtype codes in label order: benign (A,F,PT,TA) = 0..3 within benign,
/// malignant (DC,LC,MC,PC) = 0..3 within malignant.
inline const std::vector<std::string>& benign_subtypes() {
    static const std::vector<std::string> v{"A", "F", "PT", "TA"};
    return v;
}

inline const std::vector<std::string>& malignant_subtypes() {
    static const std::vector<std::string> v{"DC", "LC", "MC", "PC"};
    return v;
}

inline bool subtype_matches_class(const std::string& subtype, TumorClass c) {
    const auto& list = c == TumorClass::benign ? benign_subtypes() : malignant_subtypes();
    return std::find(list.begin(), list.end(), subtype) != list.end();
}

/// Index of a subtype within its class taxonomy, or -1.
inline int subtype_index(const std::string& subtype, TumorClass c) {
    const auto& list = c == TumorClass::benign ? benign_subtypes() : malignant_subtypes();
    const auto it = std::find(list.begin(), list.end(), subtype);
    return it == list.end() ? -1 : static_cast<int>(it - list.begin());
}

/// Parsed metadata of one biopsy image.
struct BiopsyRecord {
    std::string method;       // e.g. SOB (opaque token)
    TumorClass tumor_class = TumorClass::benign;
    std::string subtype;      // A,F,PT,TA,DC,LC,MC,PC
    std::string patient_id;   // YY-NNNN
    int magnification = 40;   // 40 | 100 | 200 | 400
    int seq = 1;
    std::string path;

    bool operator==(const BiopsyRecord& o) const {
        return method == o.method && tumor_class == o.tumor_class && subtype == o.subtype &&
               patient_id == o.patient_id && magnification == o.magnification && seq == o.seq;
    }
};

namespace detail {

inline bool all_digits(const std::string& s) {
    if (s.empty()) return false;
    for (const char ch : s)
        if (ch < '0' || ch > '9') return false;
    return true;
}

inline bool alnum_token(const std::string& s) {
    if (s.empty()) return false;
    for (const char ch : s)
        if (!std::isalnum(static_cast<unsigned char>(ch))) return false;
    return true;
}

}  // namespace detail

/// Parse `METHOD_CLASS_SUBTYPE-PATID-MAG-SEQ.ext` with PATID = `YY-NNNN`,
/// e.g. SOB_B_TA-14-4659-40-001.png. The subtype is cross-checked against
/// the class taxonomy.
inline BiopsyRecord parse_breakhis_filename(const std::string& name) {
    auto fail = [&](const std::string& segment, const std::string& why) {
        throw ParseError("'" + name + "': bad " + segment + " (" + why + ")");
    };

    // strip the extension (last dot)
    const std::size_t dot = name.rfind('.');
    const std::string stem = dot == std::string::npos ? name : name.substr(0, dot);

    std::vector<std::string> under;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= stem.size(); ++i) {
        if (i == stem.size() || stem[i] == '_') {
            under.push_back(stem.substr(start, i - start));
            start = i + 1;
        }
    }
    if (under.size() != 3) fail("structure", "expected METHOD_CLASS_SUBTYPE-... with two underscores");

    BiopsyRecord rec;
    rec.method = under[0];
    if (!detail::alnum_token(rec.method)) fail("method segment '" + under[0] + "'", "empty or non-alphanumeric");

    if (under[1] == "B") rec.tumor_class = TumorClass::benign;
    else if (under[1] == "M") rec.tumor_class = TumorClass::malignant;
    else fail("class segment '" + under[1] + "'", "must be B or M");

    std::vector<std::string> dash;
    start = 0;
    const std::string& tail = under[2];
    for (std::size_t i = 0; i <= tail.size(); ++i) {
        if (i == tail.size() || tail[i] == '-') {
            dash.push_back(tail.substr(start, i - start));
            start = i + 1;
        }
    }
    if (dash.size() != 5)
        fail("tail segment '" + tail + "'", "expected SUBTYPE-YY-NNNN-MAG-SEQ");

    rec.subtype = dash[0];
    if (!subtype_matches_class(rec.subtype, rec.tumor_class)) {
        if (subtype_matches_class(rec.subtype, rec.tumor_class == TumorClass::benign
                                                   ? TumorClass::malignant
                                                   : TumorClass::benign))
            throw ParseError("'" + name + "': taxonomy violation: subtype " + rec.subtype +
                             " does not belong to class " + under[1]);
        fail("subtype segment '" + dash[0] + "'", "unknown subtype");
    }

    if (dash[1].size() != 2 || !detail::all_digits(dash[1]))
        fail("patient year segment '" + dash[1] + "'", "expected two digits");
    if (!detail::alnum_token(dash[2]))
        fail("patient number segment '" + dash[2] + "'", "empty or non-alphanumeric");
    rec.patient_id = dash[1] + "-" + dash[2];

    if (!detail::all_digits(dash[3])) fail("magnification segment '" + dash[3] + "'", "not a number");
    const int mag = std::stoi(dash[3]);
    if (mag != 40 && mag != 100 && mag != 200 && mag != 400)
        fail("magnification segment '" + dash[3] + "'", "must be one of 40/100/200/400");
    rec.magnification = mag;

    if (!detail::all_digits(dash[4]) || dash[4].size() > 9)
        fail("sequence segment '" + dash[4] + "'", "not a number");
    rec.seq = std::stoi(dash[4]);
    if (rec.seq < 1) fail("sequence segment '" + dash[4] + "'", "must be positive");

    return rec;
}

/// Canonical filename for a record (three-digit sequence, .png extension).
/// parse(format(r)) == r for every valid record.
inline std::string format_breakhis_filename(const BiopsyRecord& rec) {
    std::ostringstream os;
    os << rec.method << "_" << tumor_class_token(rec.tumor_class) << "_" << rec.subtype << "-"
       << rec.patient_id << "-" << rec.magnification << "-";
    os.width(3);
    os.fill('0');
    os << rec.seq;
    os << ".png";
    return os.str();
}

/// Ordered record list plus provenance. The CSV interface carries only the
/// records; provenance stays in memory.
struct Manifest {
    std::vector<BiopsyRecord> records;
    std::string source_dir;
    std::string scan_time;

    std::size_t size() const { return records.size(); }

    std::map<std::string, std::size_t> counts_by_subtype() const {
        std::map<std::string, std::size_t> m;
        for (const auto& r : records) ++m[r.subtype];
        return m;
    }
};

struct SkipEntry {
    std::string path;
    std::string reason;
};

struct ScanResult {
    Manifest manifest;
    std::vector<SkipEntry> skipped;
};

/// Recursive scan; parseable names become records in lexicographic path
/// order, the rest go to the skip report.
inline ScanResult scan_directory(const std::string& root) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(root, ec))
        throw IoError("scan root '" + root + "' is not a readable directory");

    std::vector<std::string> paths;
    for (fs::recursive_directory_iterator it(root, fs::directory_options::skip_permission_denied, ec), end;
         it != end; it.increment(ec)) {
        if (ec) throw IoError("scan failed under '" + root + "': " + ec.message());
        if (it->is_regular_file()) paths.push_back(it->path().string());
    }
    std::sort(paths.begin(), paths.end());

    ScanResult out;
    out.manifest.source_dir = root;
    for (const auto& p : paths) {
        if (p.find(',') != std::string::npos || p.find('\n') != std::string::npos ||
            p.find('\r') != std::string::npos) {
            out.skipped.push_back({p, "path contains a character the manifest CSV cannot carry"});
            continue;
        }
        try {
            BiopsyRecord rec = parse_breakhis_filename(fs::path(p).filename().string());
            rec.path = p;
            out.manifest.records.push_back(std::move(rec));
        } catch (const ParseError& e) {
            out.skipped.push_back({p, e.what()});
        }
    }
    return out;
}

inline const char* kManifestHeader = "path,method,class,subtype,patient_id,magnification,seq";

inline std::string manifest_to_csv(const Manifest& m) {
    std::ostringstream os;
    os << kManifestHeader << "\n";
    for (const auto& r : m.records)
        os << r.path << "," << r.method << "," << tumor_class_token(r.tumor_class) << "," << r.subtype
           << "," << r.patient_id << "," << r.magnification << "," << r.seq << "\n";
    return os.str();
}

inline std::string skip_report_text(const std::vector<SkipEntry>& skipped) {
    std::ostringstream os;
    for (const auto& s : skipped) os << s.path << "\t" << s.reason << "\n";
    return os.str();
}

inline Manifest manifest_from_csv(std::istream& in, const std::string& what = "manifest") {
    Manifest m;
    std::string line;
    if (!std::getline(in, line)) throw ParseError(what + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kManifestHeader)
        throw ParseError(what + ": line 1: expected header '" + std::string(kManifestHeader) + "'");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                fields.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        if (fields.size() != 7)
            throw ParseError(what + ": line " + std::to_string(lineno) + ": expected 7 fields, got " +
                             std::to_string(fields.size()));
        BiopsyRecord r;
        r.path = fields[0];
        r.method = fields[1];
        if (fields[2] == "B") r.tumor_class = TumorClass::benign;
        else if (fields[2] == "M") r.tumor_class = TumorClass::malignant;
        else throw ParseError(what + ": line " + std::to_string(lineno) + ": class must be B or M");
        r.subtype = fields[3];
        if (!subtype_matches_class(r.subtype, r.tumor_class))
            throw ParseError(what + ": line " + std::to_string(lineno) + ": taxonomy violation (" +
                             fields[2] + "/" + r.subtype + ")");
        r.patient_id = fields[4];
        try {
            r.magnification = std::stoi(fields[5]);
            r.seq = std::stoi(fields[6]);
        } catch (const std::exception&) {
            throw ParseError(what + ": line " + std::to_string(lineno) + ": non-numeric field");
        }
        m.records.push_back(std::move(r));
    }
    return m;
}

inline Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path + "'");
    return manifest_from_csv(in, path);
}

/// Partition by magnification; the union of the four groups is the input.
inline std::map<int, Manifest> split_by_magnification(const Manifest& m) {
    std::map<int, Manifest> out;
    for (const int mag : {40, 100, 200, 400}) out[mag] = Manifest{};
    for (const auto& r : m.records) out[r.magnification].records.push_back(r);
    return out;
}

/// Down-sample each subtype above `target` uniformly without replacement,
/// preserving within-class order; smaller classes pass through unchanged.
inline Manifest balance_classes(const Manifest& m, std::size_t target, std::uint64_t seed) {
    if (target < 1) throw ConfigError("balance_classes: target must be >= 1");
    std::map<std::string, std::vector<std::size_t>> by_subtype;
    for (std::size_t i = 0; i < m.records.size(); ++i) by_subtype[m.records[i].subtype].push_back(i);

    std::vector<bool> keep(m.records.size(), true);
    Rng rng(seed);
    for (auto& [subtype, idx] : by_subtype) {
        if (idx.size() <= target) continue;
        // distinct per-subtype stream; iteration order over the map is fixed
        Rng sub = rng.fork(Rng::stable_hash(subtype));
        const auto chosen = sub.sample_indices(idx.size(), target);
        std::vector<bool> sel(idx.size(), false);
        for (const std::size_t c : chosen) sel[c] = true;
        for (std::size_t j = 0; j < idx.size(); ++j)
            if (!sel[j]) keep[idx[j]] = false;
    }
    Manifest out;
    out.source_dir = m.source_dir;
    for (std::size_t i = 0; i < m.records.size(); ++i)
        if (keep[i]) out.records.push_back(m.records[i]);
    return out;
}

struct SplitResult {
    Manifest train;
    Manifest val;
    std::vector<std::string> warnings;
    std::vector<std::string> leaked_patients;  // patients present in both splits
};

/// Per-subtype stratified split: floor(n*fraction) records to validation via
/// a seeded shuffle. Classes with fewer than 2 records stay in train with a
/// warning. Patient overlap is reported, not prevented.
inline SplitResult stratified_split(const Manifest& m, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw ConfigError("stratified_split: fraction must be in (0,1)");
    std::map<std::string, std::vector<std::size_t>> by_subtype;
    for (std::size_t i = 0; i < m.records.size(); ++i) by_subtype[m.records[i].subtype].push_back(i);

    SplitResult out;
    std::vector<bool> to_val(m.records.size(), false);
    Rng rng(seed);
    for (auto& [subtype, idx] : by_subtype) {
        if (idx.size() < 2) {
            out.warnings.push_back("subtype " + subtype + " has fewer than 2 records; kept in train");
            continue;
        }
        const std::size_t n_val =
            static_cast<std::size_t>(std::floor(static_cast<double>(idx.size()) * val_fraction));
        if (n_val == 0) continue;
        Rng sub = rng.fork(Rng::stable_hash(subtype));
        const auto chosen = sub.sample_indices(idx.size(), n_val);
        for (const std::size_t c : chosen) to_val[idx[c]] = true;
    }
    for (std::size_t i = 0; i < m.records.size(); ++i)
        (to_val[i] ? out.val : out.train).records.push_back(m.records[i]);

    std::map<std::string, int> where;  // 1 train, 2 val, 3 both
    for (const auto& r : out.train.records) where[r.patient_id] |= 1;
    for (const auto& r : out.val.records) where[r.patient_id] |= 2;
    for (const auto& [patient, w] : where)
        if (w == 3) out.leaked_patients.push_back(patient);
    return out;
}

}  // namespace histofuse
