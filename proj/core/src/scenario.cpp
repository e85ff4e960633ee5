#include "evfl/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <json.hpp>

#include "evfl/errors.hpp"

namespace evfl {

namespace {

using nlohmann::json;

std::vector<int> even_split(std::size_t columns, int parties) {
    std::vector<int> owner(columns, 0);
    std::size_t base = columns / static_cast<std::size_t>(parties);
    std::size_t rem = columns % static_cast<std::size_t>(parties);
    std::size_t col = 0;
    for (int m = 0; m < parties; ++m) {
        std::size_t width = base + (static_cast<std::size_t>(m) < rem ? 1 : 0);
        for (std::size_t j = 0; j < width; ++j) owner[col++] = m;
    }
    return owner;
}

// Sample k distinct values from ids without replacement, preserving order.
std::vector<int> subsample_sorted(const std::vector<int>& ids, std::size_t k, Rng& rng) {
    std::vector<int> pool = ids;
    rng.shuffle(pool);
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace

std::vector<Matrix> partition_vertical(const Matrix& features, const SplitSpec& split,
                                       int parties) {
    if (parties < 1) throw ScenarioError("partition_vertical: needs at least one party");
    std::vector<int> owner = split.column_party.empty()
                                 ? even_split(features.cols(), parties)
                                 : split.column_party;
    if (owner.size() != features.cols())
        throw ScenarioError("partition_vertical: column assignment length differs");
    std::vector<std::vector<std::size_t>> cols(static_cast<std::size_t>(parties));
    for (std::size_t j = 0; j < owner.size(); ++j) {
        int m = owner[j];
        if (m < 0 || m >= parties)
            throw ScenarioError("partition_vertical: column assigned to unknown party");
        cols[static_cast<std::size_t>(m)].push_back(j);
    }
    for (int m = 0; m < parties; ++m)
        if (cols[static_cast<std::size_t>(m)].empty())
            throw ScenarioError("partition_vertical: party " + std::to_string(m) +
                                " owns no columns");
    std::vector<Matrix> blocks;
    blocks.reserve(static_cast<std::size_t>(parties));
    for (int m = 0; m < parties; ++m) {
        const std::vector<std::size_t>& cix = cols[static_cast<std::size_t>(m)];
        Matrix block(features.rows(), cix.size());
        for (std::size_t i = 0; i < features.rows(); ++i) {
            const double* src = features.row_ptr(i);
            double* dst = block.row_ptr(i);
            for (std::size_t j = 0; j < cix.size(); ++j) dst[j] = src[cix[j]];
        }
        blocks.push_back(std::move(block));
    }
    return blocks;
}

std::vector<int> pick_aligned_rows(std::size_t train_rows, double aligned_ratio,
                                   Rng& rng) {
    if (train_rows == 0) throw ScenarioError("pick_aligned_rows: no train rows");
    if (aligned_ratio <= 0.0 || aligned_ratio > 1.0)
        throw ScenarioError("pick_aligned_rows: aligned_ratio outside (0, 1]");
    std::size_t k = static_cast<std::size_t>(
        std::llround(aligned_ratio * static_cast<double>(train_rows)));
    k = std::min(std::max<std::size_t>(k, 1), train_rows);
    std::vector<int> ids(train_rows);
    for (std::size_t i = 0; i < train_rows; ++i) ids[i] = static_cast<int>(i);
    return subsample_sorted(ids, k, rng);
}

std::vector<int> Scenario::aligned_labels() const {
    std::vector<int> out;
    out.reserve(aligned_ids.size());
    for (int id : aligned_ids) out.push_back(train_labels[static_cast<std::size_t>(id)]);
    return out;
}

Matrix Scenario::aligned_block(int party) const {
    return take_rows(train_X[static_cast<std::size_t>(party)], aligned_ids);
}

Matrix Scenario::unaligned_block(int party) const {
    return take_rows(train_X[static_cast<std::size_t>(party)],
                     unaligned_ids[static_cast<std::size_t>(party)]);
}

namespace {

void validate_rare(const ScenarioSpec& spec, int classes) {
    std::vector<bool> seen(static_cast<std::size_t>(classes), false);
    int untouched = classes;
    for (const RareClassSpec& rare : spec.imbalance.rare) {
        if (rare.class_id < 0 || rare.class_id >= classes)
            throw ScenarioError("imbalance: rare class " + std::to_string(rare.class_id) +
                                " out of range");
        if (seen[static_cast<std::size_t>(rare.class_id)])
            throw ScenarioError("imbalance: rare class " + std::to_string(rare.class_id) +
                                " listed twice");
        seen[static_cast<std::size_t>(rare.class_id)] = true;
        --untouched;
        if (rare.mode == RareMode::few_shot && rare.keep_count < 1)
            throw ScenarioError("imbalance: few_shot keep_count must be at least 1");
    }
    if (untouched < 1)
        throw ScenarioError("imbalance: every class marked rare");
}

}  // namespace

Scenario build_scenario(const ScenarioSpec& spec, std::uint64_t run_seed) {
    std::uint64_t resolved = spec.seed != 0 ? spec.seed : run_seed;
    if (resolved == 0) throw ScenarioError("build_scenario: seed must be nonzero");
    std::uint64_t scen_seed = derive_seed(resolved, seed_tag::kScenario);

    RawDataset raw;
    bool is_csv = spec.dataset.kind == DatasetSpec::Kind::csv;
    if (is_csv) {
        CsvSchema schema;
        schema.label_column = spec.dataset.csv.label_column;
        schema.delimiter = spec.dataset.csv.delimiter;
        raw = load_tabular(spec.dataset.csv.path, schema);
    } else {
        raw = synth_dataset(spec.dataset.synth, scen_seed);
    }
    if (raw.classes < 2) throw ScenarioError("build_scenario: needs at least 2 classes");
    if (spec.parties < 1) throw ScenarioError("build_scenario: needs at least 1 party");
    if (spec.test_ratio <= 0.0 || spec.test_ratio >= 1.0)
        throw ScenarioError("build_scenario: test_ratio outside (0, 1)");
    validate_rare(spec, raw.classes);
    if (spec.imbalance.gamma_ratio < 1.0)
        throw ScenarioError("build_scenario: gamma_ratio below 1");

    // Stratified test carve-out before anything else touches the rows.
    Rng test_rng(derive_seed(scen_seed, seed_tag::kTestSplit));
    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(raw.classes));
    for (std::size_t i = 0; i < raw.size(); ++i)
        by_class[static_cast<std::size_t>(raw.labels[i])].push_back(static_cast<int>(i));
    std::vector<int> test_ids;
    for (std::vector<int>& rows : by_class) {
        if (rows.empty()) continue;
        std::size_t k = static_cast<std::size_t>(
            std::llround(spec.test_ratio * static_cast<double>(rows.size())));
        k = std::min(std::max<std::size_t>(k, 1), rows.size() - 1);
        std::vector<int> picked = subsample_sorted(rows, k, test_rng);
        test_ids.insert(test_ids.end(), picked.begin(), picked.end());
    }
    std::sort(test_ids.begin(), test_ids.end());
    std::vector<bool> is_test(raw.size(), false);
    for (int id : test_ids) is_test[static_cast<std::size_t>(id)] = true;
    std::vector<int> train_ids;
    train_ids.reserve(raw.size() - test_ids.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        if (!is_test[i]) train_ids.push_back(static_cast<int>(i));

    if (is_csv) standardize_columns(raw, train_ids);

    std::vector<Matrix> blocks = partition_vertical(raw.features, spec.split, spec.parties);

    Scenario out;
    out.parties = spec.parties;
    out.classes = raw.classes;
    out.seed = resolved;
    out.spec = spec;
    out.spec.seed = resolved;
    for (const Matrix& block : blocks) {
        out.train_X.push_back(take_rows(block, train_ids));
        out.test_X.push_back(take_rows(block, test_ids));
    }
    for (int id : train_ids) out.train_labels.push_back(raw.labels[static_cast<std::size_t>(id)]);
    for (int id : test_ids) out.test_labels.push_back(raw.labels[static_cast<std::size_t>(id)]);

    // Aligned rows are one shared seeded draw; every party starts from the
    // identical complement.
    Rng aligned_rng(derive_seed(scen_seed, seed_tag::kAlignedSplit));
    out.aligned_ids = pick_aligned_rows(out.train_labels.size(), spec.aligned_ratio,
                                        aligned_rng);
    std::vector<bool> is_aligned(out.train_labels.size(), false);
    for (int id : out.aligned_ids) is_aligned[static_cast<std::size_t>(id)] = true;
    std::vector<int> complement;
    for (std::size_t i = 0; i < out.train_labels.size(); ++i)
        if (!is_aligned[i]) complement.push_back(static_cast<int>(i));

    // Rare-class surgery applies to the aligned labeled pool only.
    for (const RareClassSpec& rare : spec.imbalance.rare) {
        std::vector<int> keep;
        std::vector<int> members;
        for (int id : out.aligned_ids) {
            if (out.train_labels[static_cast<std::size_t>(id)] == rare.class_id)
                members.push_back(id);
            else
                keep.push_back(id);
        }
        if (rare.mode == RareMode::zero_shot) {
            out.zero_shot_classes.push_back(rare.class_id);
        } else {
            if (static_cast<long long>(members.size()) < rare.keep_count)
                throw ScenarioError(
                    "imbalance: few_shot class " + std::to_string(rare.class_id) +
                    " has " + std::to_string(members.size()) + " aligned rows, needs " +
                    std::to_string(rare.keep_count));
            Rng few_rng(derive_seed(scen_seed, seed_tag::kImbalance,
                                    static_cast<std::uint64_t>(rare.class_id), 0xFE));
            std::vector<int> kept = subsample_sorted(
                members, static_cast<std::size_t>(rare.keep_count), few_rng);
            keep.insert(keep.end(), kept.begin(), kept.end());
        }
        std::sort(keep.begin(), keep.end());
        out.aligned_ids = std::move(keep);
    }
    {
        std::vector<int> labels = out.aligned_labels();
        std::vector<long long> counts = class_counts(labels, out.classes);
        int present = 0;
        for (long long c : counts)
            if (c > 0) ++present;
        if (present < 2)
            throw ScenarioError(
                "imbalance: fewer than two classes left in the aligned labeled pool");
    }
    std::sort(out.zero_shot_classes.begin(), out.zero_shot_classes.end());

    // Per-party unaligned pools: majority stays, the rest is subsampled to
    // majority/gamma. gamma_ratio == 1 imposes nothing.
    out.unaligned_ids.assign(static_cast<std::size_t>(spec.parties), complement);
    if (spec.imbalance.gamma_ratio > 1.0) {
        std::uint64_t maj_seed = spec.imbalance.majority_seed != 0
                                     ? spec.imbalance.majority_seed
                                     : derive_seed(scen_seed, seed_tag::kMajorityPick);
        std::vector<bool> rare_class(static_cast<std::size_t>(out.classes), false);
        for (const RareClassSpec& rare : spec.imbalance.rare)
            rare_class[static_cast<std::size_t>(rare.class_id)] = true;
        for (int m = 0; m < spec.parties; ++m) {
            std::vector<std::vector<int>> pool_by_class(
                static_cast<std::size_t>(out.classes));
            for (int id : out.unaligned_ids[static_cast<std::size_t>(m)])
                pool_by_class[static_cast<std::size_t>(
                                  out.train_labels[static_cast<std::size_t>(id)])]
                    .push_back(id);
            std::vector<int> candidates;
            for (int z = 0; z < out.classes; ++z)
                if (!rare_class[static_cast<std::size_t>(z)] &&
                    !pool_by_class[static_cast<std::size_t>(z)].empty())
                    candidates.push_back(z);
            if (candidates.empty())
                throw ScenarioError("imbalance: party " + std::to_string(m) +
                                    " has no unaligned rows of any eligible majority class");
            Rng pick_rng(derive_seed(maj_seed, static_cast<std::uint64_t>(m)));
            int majority = candidates[pick_rng.index(candidates.size())];
            long long n_maj =
                static_cast<long long>(pool_by_class[static_cast<std::size_t>(majority)].size());
            long long target = std::max<long long>(
                1, std::llround(static_cast<double>(n_maj) / spec.imbalance.gamma_ratio));
            long long tolerance =
                std::max<long long>(1, std::llround(0.02 * static_cast<double>(target)));
            std::vector<int> kept;
            for (int z = 0; z < out.classes; ++z) {
                std::vector<int>& rows = pool_by_class[static_cast<std::size_t>(z)];
                if (z == majority) {
                    kept.insert(kept.end(), rows.begin(), rows.end());
                    continue;
                }
                long long have = static_cast<long long>(rows.size());
                if (have > target) {
                    Rng sub_rng(derive_seed(scen_seed, seed_tag::kImbalance,
                                            static_cast<std::uint64_t>(m),
                                            static_cast<std::uint64_t>(z)));
                    std::vector<int> sub = subsample_sorted(
                        rows, static_cast<std::size_t>(target), sub_rng);
                    kept.insert(kept.end(), sub.begin(), sub.end());
                } else if (have + tolerance >= target) {
                    kept.insert(kept.end(), rows.begin(), rows.end());
                } else {
                    throw ScenarioError(
                        "imbalance: party " + std::to_string(m) + " class " +
                        std::to_string(z) + " has " + std::to_string(have) +
                        " unaligned rows, ratio " +
                        std::to_string(spec.imbalance.gamma_ratio) + " needs " +
                        std::to_string(target) + " (deficit " +
                        std::to_string(target - have) + ")");
                }
            }
            std::sort(kept.begin(), kept.end());
            out.unaligned_ids[static_cast<std::size_t>(m)] = std::move(kept);
        }
    }

    // Bookkeeping for the imbalance report.
    out.imbalance.aligned_counts = class_counts(out.aligned_labels(), out.classes);
    std::vector<long long> pooled(static_cast<std::size_t>(out.classes), 0);
    for (int m = 0; m < spec.parties; ++m) {
        std::vector<int> labels;
        labels.reserve(out.unaligned_ids[static_cast<std::size_t>(m)].size());
        for (int id : out.unaligned_ids[static_cast<std::size_t>(m)])
            labels.push_back(out.train_labels[static_cast<std::size_t>(id)]);
        std::vector<long long> counts = labels.empty()
                                            ? std::vector<long long>(
                                                  static_cast<std::size_t>(out.classes), 0)
                                            : class_counts(labels, out.classes);
        for (int z = 0; z < out.classes; ++z)
            pooled[static_cast<std::size_t>(z)] += counts[static_cast<std::size_t>(z)];
        out.imbalance.unaligned_counts.push_back(std::move(counts));
    }
    out.imbalance.global_counts = out.imbalance.aligned_counts;
    for (int z = 0; z < out.classes; ++z)
        out.imbalance.global_counts[static_cast<std::size_t>(z)] +=
            pooled[static_cast<std::size_t>(z)];
    out.imbalance.mid_value = mid(out.imbalance.global_counts);
    long long pooled_total = 0;
    for (long long c : pooled) pooled_total += c;
    out.imbalance.wcs_value =
        pooled_total == 0 ? 1.0 : wcs(pooled, out.imbalance.unaligned_counts);
    return out;
}

namespace {

json dataset_to_json(const DatasetSpec& d) {
    json j;
    if (d.kind == DatasetSpec::Kind::synth) {
        j["type"] = "synth";
        j["classes"] = d.synth.classes;
        j["per_class"] = d.synth.per_class;
        j["features"] = d.synth.features;
        j["class_separation"] = d.synth.class_separation;
        j["cluster_std"] = d.synth.cluster_std;
    } else {
        j["type"] = "csv";
        j["path"] = d.csv.path;
        j["label_column"] = d.csv.label_column;
        j["delimiter"] = std::string(1, d.csv.delimiter);
    }
    return j;
}

DatasetSpec dataset_from_json(const json& j) {
    if (!j.is_object() || !j.contains("type"))
        throw ConfigError("dataset: object with a 'type' field required");
    DatasetSpec d;
    std::string type = j.at("type").get<std::string>();
    if (type == "synth") {
        d.kind = DatasetSpec::Kind::synth;
        if (j.contains("classes")) d.synth.classes = j.at("classes").get<int>();
        if (j.contains("per_class")) {
            if (j.at("per_class").is_number())
                d.synth.per_class = {j.at("per_class").get<long long>()};
            else
                d.synth.per_class = j.at("per_class").get<std::vector<long long>>();
        }
        if (j.contains("features")) d.synth.features = j.at("features").get<int>();
        if (j.contains("class_separation"))
            d.synth.class_separation = j.at("class_separation").get<double>();
        if (j.contains("cluster_std"))
            d.synth.cluster_std = j.at("cluster_std").get<double>();
    } else if (type == "csv") {
        d.kind = DatasetSpec::Kind::csv;
        if (!j.contains("path") || !j.contains("label_column"))
            throw ConfigError("dataset: csv needs 'path' and 'label_column'");
        d.csv.path = j.at("path").get<std::string>();
        d.csv.label_column = j.at("label_column").get<std::string>();
        if (j.contains("delimiter")) {
            std::string delim = j.at("delimiter").get<std::string>();
            if (delim.size() != 1)
                throw ConfigError("dataset.delimiter: single character required");
            d.csv.delimiter = delim[0];
        }
    } else {
        throw ConfigError("dataset.type: expected 'synth' or 'csv', got '" + type + "'");
    }
    return d;
}

}  // namespace

std::string scenario_spec_to_json(const ScenarioSpec& spec) {
    json j;
    j["dataset"] = dataset_to_json(spec.dataset);
    j["parties"] = spec.parties;
    if (!spec.split.column_party.empty()) j["column_party"] = spec.split.column_party;
    j["aligned_ratio"] = spec.aligned_ratio;
    j["test_ratio"] = spec.test_ratio;
    json imb;
    imb["gamma_ratio"] = spec.imbalance.gamma_ratio;
    json rare = json::array();
    for (const RareClassSpec& r : spec.imbalance.rare) {
        json e;
        e["class"] = r.class_id;
        e["mode"] = r.mode == RareMode::zero_shot ? "zero_shot" : "few_shot";
        if (r.mode == RareMode::few_shot) e["keep_count"] = r.keep_count;
        rare.push_back(e);
    }
    imb["rare"] = rare;
    if (spec.imbalance.majority_seed != 0)
        imb["majority_seed"] = spec.imbalance.majority_seed;
    j["imbalance"] = imb;
    j["scenario_seed"] = spec.seed;
    return j.dump(2);
}

ScenarioSpec scenario_spec_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("manifest: top-level object required");
    ScenarioSpec spec;
    try {
        if (!j.contains("dataset"))
            throw ConfigError("manifest: missing required field 'dataset'");
        spec.dataset = dataset_from_json(j.at("dataset"));
        if (j.contains("parties")) spec.parties = j.at("parties").get<int>();
        if (j.contains("column_party"))
            spec.split.column_party = j.at("column_party").get<std::vector<int>>();
        if (j.contains("aligned_ratio"))
            spec.aligned_ratio = j.at("aligned_ratio").get<double>();
        if (j.contains("test_ratio")) spec.test_ratio = j.at("test_ratio").get<double>();
        if (j.contains("imbalance")) {
            const json& imb = j.at("imbalance");
            if (imb.contains("gamma_ratio"))
                spec.imbalance.gamma_ratio = imb.at("gamma_ratio").get<double>();
            if (imb.contains("majority_seed"))
                spec.imbalance.majority_seed = imb.at("majority_seed").get<std::uint64_t>();
            if (imb.contains("rare")) {
                for (const json& e : imb.at("rare")) {
                    RareClassSpec r;
                    r.class_id = e.at("class").get<int>();
                    std::string mode = e.at("mode").get<std::string>();
                    if (mode == "zero_shot") {
                        r.mode = RareMode::zero_shot;
                    } else if (mode == "few_shot") {
                        r.mode = RareMode::few_shot;
                        r.keep_count = e.at("keep_count").get<long long>();
                    } else {
                        throw ConfigError("imbalance.rare.mode: '" + mode + "' unknown");
                    }
                    spec.imbalance.rare.push_back(r);
                }
            }
        }
        if (j.contains("scenario_seed"))
            spec.seed = j.at("scenario_seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }
    return spec;
}

}  // namespace evfl
