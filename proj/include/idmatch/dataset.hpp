#ifndef IDMATCH_DATASET_HPP_
#define IDMATCH_DATASET_HPP_

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "idmatch/common.hpp"

namespace idmatch {

// Side a sample was captured on: the document photo or the live capture.
enum class Domain { DocSide, LiveSide };

inline const char* domain_tag(Domain d) {
  return d == Domain::DocSide ? "doc" : "live";
}

struct Sample {
  Eigen::VectorXd input;
  int identity = 0;
  Domain domain = Domain::DocSide;
};

// Per-identity positions into ShallowDataset::samples.
struct IdentityIndex {
  std::vector<std::size_t> doc;
  std::vector<std::size_t> live;
};

// A wide, shallow two-domain dataset: every identity owns exactly one
// doc-side sample and at least one live-side sample.
class ShallowDataset {
 public:
  std::vector<Sample> samples;
  int num_identities = 0;
  int d_in = 0;
  std::uint64_t seed = 0;  // generator seed, 0 when not synthetic

  const IdentityIndex& index_of(int identity) const {
    if (identity < 0 || identity >= num_identities) {
      throw ArgumentError("identity out of range: " + std::to_string(identity));
    }
    return index_[static_cast<std::size_t>(identity)];
  }

  void rebuild_index() {
    index_.assign(static_cast<std::size_t>(num_identities), IdentityIndex{});
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Sample& s = samples[i];
      if (s.identity < 0 || s.identity >= num_identities) {
        throw FormatError("sample " + std::to_string(i) + " has identity " +
                          std::to_string(s.identity) + " outside [0, " +
                          std::to_string(num_identities) + ")");
      }
      auto& entry = index_[static_cast<std::size_t>(s.identity)];
      (s.domain == Domain::DocSide ? entry.doc : entry.live).push_back(i);
    }
  }

  // Structural invariants: one doc sample and >=1 live samples per identity,
  // finite inputs of the declared dimension.
  void validate() const {
    if (index_.size() != static_cast<std::size_t>(num_identities)) {
      throw FormatError("identity index out of date");
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Sample& s = samples[i];
      if (s.input.size() != d_in) {
        throw FormatError("sample " + std::to_string(i) + " has dimension " +
                          std::to_string(s.input.size()) + ", expected " +
                          std::to_string(d_in));
      }
      if (!s.input.allFinite()) {
        throw NumericError("sample " + std::to_string(i) + " has non-finite entries");
      }
    }
    for (int id = 0; id < num_identities; ++id) {
      const auto& entry = index_[static_cast<std::size_t>(id)];
      if (entry.doc.size() != 1 || entry.live.empty()) {
        throw FormatError("identity " + std::to_string(id) + " has " +
                          std::to_string(entry.doc.size()) + " doc and " +
                          std::to_string(entry.live.size()) + " live samples");
      }
    }
  }

  bool operator==(const ShallowDataset& other) const {
    if (num_identities != other.num_identities || d_in != other.d_in ||
        seed != other.seed || samples.size() != other.samples.size()) {
      return false;
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Sample& a = samples[i];
      const Sample& b = other.samples[i];
      if (a.identity != b.identity || a.domain != b.domain) return false;
      if (a.input.size() != b.input.size()) return false;
      if (!(a.input.array() == b.input.array()).all()) return false;
    }
    return true;
  }

 private:
  std::vector<IdentityIndex> index_;
};

// Number of live-side samples per identity, drawn uniformly from
// [min_count, max_count]. The default is the one-selfie regime.
struct SelfieCount {
  int min_count = 1;
  int max_count = 1;
};

// Gaussian-mixture generator with an additive per-domain offset: every
// identity gets a latent center; doc samples add a fixed offset of the given
// magnitude shared by all identities, emulating the covariate shift between
// the two capture sources.
inline ShallowDataset generate_synthetic(int num_identities, SelfieCount selfies,
                                         int d_in, double domain_shift,
                                         double noise, std::uint64_t seed) {
  if (num_identities < 2) throw ArgumentError("num_identities must be >= 2");
  if (d_in < 2) throw ArgumentError("d_in must be >= 2");
  if (!(noise >= 0.0)) throw ArgumentError("noise must be >= 0");
  if (!(domain_shift >= 0.0)) throw ArgumentError("domain_shift must be >= 0");
  if (selfies.min_count < 1 || selfies.max_count < selfies.min_count) {
    throw ArgumentError("selfie count range must satisfy 1 <= min <= max");
  }

  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> count_dist(selfies.min_count,
                                                selfies.max_count);

  Eigen::VectorXd offset = Eigen::VectorXd::Zero(d_in);
  {
    Eigen::VectorXd dir(d_in);
    for (int i = 0; i < d_in; ++i) dir[i] = gauss(rng);
    if (domain_shift > 0.0) offset = domain_shift * dir.normalized();
  }

  ShallowDataset ds;
  ds.num_identities = num_identities;
  ds.d_in = d_in;
  ds.seed = seed;

  auto draw = [&](const Eigen::VectorXd& center, bool doc_side) {
    Eigen::VectorXd x = center;
    if (doc_side) x += offset;
    for (int i = 0; i < d_in; ++i) x[i] += noise * gauss(rng);
    return x;
  };

  for (int id = 0; id < num_identities; ++id) {
    Eigen::VectorXd center(d_in);
    for (int i = 0; i < d_in; ++i) center[i] = gauss(rng);
    const int n_selfies = count_dist(rng);
    ds.samples.push_back({draw(center, true), id, Domain::DocSide});
    for (int k = 0; k < n_selfies; ++k) {
      ds.samples.push_back({draw(center, false), id, Domain::LiveSide});
    }
  }
  ds.rebuild_index();
  return ds;
}

// Identity-level k-fold partition. Identities, never samples, are assigned to
// folds so no identity can straddle a train/test boundary.
struct FoldSplit {
  int fold_count = 0;
  std::vector<int> assignment;  // identity -> fold

  std::vector<int> fold_identities(int fold) const {
    std::vector<int> out;
    for (int id = 0; id < static_cast<int>(assignment.size()); ++id) {
      if (assignment[static_cast<std::size_t>(id)] == fold) out.push_back(id);
    }
    return out;
  }

  std::vector<int> train_identities(int fold) const {
    std::vector<int> out;
    for (int id = 0; id < static_cast<int>(assignment.size()); ++id) {
      if (assignment[static_cast<std::size_t>(id)] != fold) out.push_back(id);
    }
    return out;
  }
};

inline FoldSplit split_folds(const ShallowDataset& dataset, int k,
                             std::uint64_t seed) {
  if (k < 2) throw ArgumentError("fold count must be >= 2");
  if (k > dataset.num_identities) {
    throw ArgumentError("fold count " + std::to_string(k) +
                        " exceeds identity count " +
                        std::to_string(dataset.num_identities));
  }
  std::vector<int> ids(static_cast<std::size_t>(dataset.num_identities));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  FoldSplit split;
  split.fold_count = k;
  split.assignment.assign(ids.size(), 0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    split.assignment[static_cast<std::size_t>(ids[i])] = static_cast<int>(i % k);
  }
  return split;
}

// Restriction of a dataset to the identities inside (or outside) one fold,
// with identities renumbered densely so classifier heads stay compact.
// old_ids, when given, receives the original identity of each new label.
inline ShallowDataset subset_for_fold(const ShallowDataset& dataset,
                                      const FoldSplit& split, int fold,
                                      bool held_out,
                                      std::vector<int>* old_ids = nullptr) {
  if (fold < 0 || fold >= split.fold_count) {
    throw ArgumentError("fold index out of range");
  }
  std::vector<int> keep =
      held_out ? split.fold_identities(fold) : split.train_identities(fold);
  std::vector<int> remap(static_cast<std::size_t>(dataset.num_identities), -1);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    remap[static_cast<std::size_t>(keep[i])] = static_cast<int>(i);
  }

  ShallowDataset out;
  out.num_identities = static_cast<int>(keep.size());
  out.d_in = dataset.d_in;
  out.seed = dataset.seed;
  for (const Sample& s : dataset.samples) {
    const int new_id = remap[static_cast<std::size_t>(s.identity)];
    if (new_id >= 0) out.samples.push_back({s.input, new_id, s.domain});
  }
  out.rebuild_index();
  if (old_ids) *old_ids = std::move(keep);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset file format: a self-describing text header followed by one record
// per line ("<identity> <doc|live> <v0> <v1> ...").  Numbers are written with
// shortest round-trip precision, so load(save(ds)) == ds bit-exactly.
// A worked example lives in docs/dataset-format.md.
// ---------------------------------------------------------------------------

inline std::string serialize_dataset(const ShallowDataset& dataset) {
  std::string out;
  out.reserve(64 + dataset.samples.size() * (16 + 24 * static_cast<std::size_t>(dataset.d_in)));
  out += "idmatch-dataset v1\n";
  out += "d_in " + std::to_string(dataset.d_in) + "\n";
  out += "identities " + std::to_string(dataset.num_identities) + "\n";
  out += "samples " + std::to_string(dataset.samples.size()) + "\n";
  out += "seed " + std::to_string(dataset.seed) + "\n";
  for (const Sample& s : dataset.samples) {
    out += std::to_string(s.identity);
    out += ' ';
    out += domain_tag(s.domain);
    for (int i = 0; i < s.input.size(); ++i) {
      out += ' ';
      out += format_double(s.input[i]);
    }
    out += '\n';
  }
  return out;
}

inline void save_dataset(const ShallowDataset& dataset,
                         const std::filesystem::path& path) {
  write_file_atomic(path, serialize_dataset(dataset));
}

inline ShallowDataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line)) {
      throw FormatError("dataset truncated at line " + std::to_string(line_no));
    }
    ++line_no;
  };
  auto header_value = [&](const std::string& key) -> long long {
    next_line();
    if (line.rfind(key + " ", 0) != 0) {
      throw FormatError("expected '" + key + "' header at line " +
                        std::to_string(line_no));
    }
    return parse_int(std::string_view(line).substr(key.size() + 1),
                     "dataset header");
  };

  next_line();
  if (line != "idmatch-dataset v1") {
    throw FormatError("unrecognized dataset header: '" + line + "'");
  }
  ShallowDataset ds;
  ds.d_in = static_cast<int>(header_value("d_in"));
  ds.num_identities = static_cast<int>(header_value("identities"));
  const long long n_samples = header_value("samples");
  ds.seed = static_cast<std::uint64_t>(header_value("seed"));
  if (ds.d_in < 1 || ds.num_identities < 1 || n_samples < 1) {
    throw FormatError("dataset header declares empty dataset");
  }

  ds.samples.reserve(static_cast<std::size_t>(n_samples));
  for (long long r = 0; r < n_samples; ++r) {
    next_line();
    std::istringstream rec(line);
    std::string id_tok, domain_tok;
    if (!(rec >> id_tok >> domain_tok)) {
      throw FormatError("malformed record at line " + std::to_string(line_no));
    }
    const std::string at = " at line " + std::to_string(line_no);
    Sample s;
    s.identity = static_cast<int>(parse_int(id_tok, "record identity" + at));
    if (domain_tok == "doc") {
      s.domain = Domain::DocSide;
    } else if (domain_tok == "live") {
      s.domain = Domain::LiveSide;
    } else {
      throw FormatError("bad domain tag '" + domain_tok + "' at line " +
                        std::to_string(line_no));
    }
    s.input.resize(ds.d_in);
    for (int i = 0; i < ds.d_in; ++i) {
      std::string tok;
      if (!(rec >> tok)) {
        throw FormatError("record at line " + std::to_string(line_no) + " has " +
                          std::to_string(i) + " of " + std::to_string(ds.d_in) +
                          " vector entries");
      }
      s.input[i] = parse_double(tok, "record vector entry" + at);
    }
    std::string extra;
    if (rec >> extra) {
      throw FormatError("trailing content '" + extra + "'" + at);
    }
    ds.samples.push_back(std::move(s));
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty()) {
      throw FormatError("unexpected content after last record at line " +
                        std::to_string(line_no));
    }
  }
  ds.rebuild_index();
  ds.validate();
  return ds;
}

inline ShallowDataset load_dataset(const std::filesystem::path& path) {
  return parse_dataset(read_file(path));
}

}  // namespace idmatch

#endif  // IDMATCH_DATASET_HPP_
