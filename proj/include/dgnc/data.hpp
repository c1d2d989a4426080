// Dataset representation and ingestion: ROI time-series signals with binary
// labels, per-region z-scoring, non-overlapping temporal windowing, and a
// synthetic generator that plants class-dependent connectivity.
//
// On-disk format: one CSV per subject (one row per timepoint, V columns, no
// header) plus a manifest CSV with header subject_id,filename,label,split.
// Lines starting with '#' are comments. UTF-8, '.' decimal separator.
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dgnc/common.hpp"
#include "dgnc/tensor.hpp"

namespace dgnc {

template <typename Real>
struct BoldSignal {
  std::string subject_id;
  Tensor<Real> series;  // T' x V, constant (no grad)

  std::size_t timepoints() const { return series.rows(); }
  std::size_t regions() const { return series.cols(); }
};

template <typename Real>
struct LabeledDataset {
  std::vector<BoldSignal<Real>> subjects;
  std::vector<int> labels;  // 0 or 1, parallel to subjects
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;

  std::size_t regions() const { return subjects.empty() ? 0 : subjects[0].regions(); }
};

template <typename Real>
struct WindowSet {
  std::vector<Tensor<Real>> windows;  // n matrices, each P x V, temporal order
  std::size_t window_size = 0;

  std::size_t count() const { return windows.size(); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

}  // namespace detail

// Reads one series CSV (T' rows, V columns). Validates rectangularity and
// finiteness; errors name the subject.
template <typename Real>
Tensor<Real> read_series_csv(const std::filesystem::path& file, const std::string& subject_id) {
  std::ifstream in(file);
  if (!in) {
    throw IngestError("subject " + subject_id + ": cannot open series file " + file.string());
  }
  std::vector<Real> values;
  std::size_t cols = 0, row = 0;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto fields = detail::split_csv_line(t);
    if (cols == 0) {
      cols = fields.size();
    } else if (fields.size() != cols) {
      throw IngestError("subject " + subject_id + ": ragged row " + std::to_string(row) +
                        " in " + file.string() + " (expected " + std::to_string(cols) +
                        " columns, got " + std::to_string(fields.size()) + ")");
    }
    for (const auto& f : fields) {
      double v = 0;
      if (!detail::parse_double(f, v)) {
        throw IngestError("subject " + subject_id + ": unparsable value '" + f + "' in " +
                          file.string());
      }
      if (!std::isfinite(v)) {
        throw IngestError("subject " + subject_id + ": non-finite entry in " + file.string());
      }
      values.push_back(static_cast<Real>(v));
    }
    ++row;
  }
  if (row == 0 || cols == 0) {
    throw IngestError("subject " + subject_id + ": empty series file " + file.string());
  }
  return Tensor<Real>::from_data({row, cols}, std::move(values));
}

// Loads the manifest and every referenced series file. Validates binary
// labels, a known split tag, and a uniform region count across subjects.
template <typename Real>
LabeledDataset<Real> load_dataset(const std::filesystem::path& dir,
                                  const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) {
    throw IngestError("cannot open manifest " + manifest.string());
  }
  LabeledDataset<Real> ds;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;  // first non-comment row is the header
      continue;
    }
    auto fields = detail::split_csv_line(t);
    if (fields.size() != 4) {
      throw IngestError("manifest row with " + std::to_string(fields.size()) +
                        " fields (expected subject_id,filename,label,split): " + t);
    }
    const std::string& id = fields[0];
    const std::string& file = fields[1];
    const std::string& label_s = fields[2];
    const std::string& split = fields[3];
    if (label_s != "0" && label_s != "1") {
      throw IngestError("subject " + id + ": non-binary label '" + label_s + "'");
    }
    if (split != "train" && split != "test") {
      throw IngestError("subject " + id + ": unknown split '" + split + "'");
    }
    BoldSignal<Real> sig;
    sig.subject_id = id;
    sig.series = read_series_csv<Real>(dir / file, id);
    if (!ds.subjects.empty() && sig.regions() != ds.subjects[0].regions()) {
      throw IngestError("subject " + id + ": region count " + std::to_string(sig.regions()) +
                        " differs from dataset region count " +
                        std::to_string(ds.subjects[0].regions()));
    }
    const std::size_t idx = ds.subjects.size();
    ds.subjects.push_back(std::move(sig));
    ds.labels.push_back(label_s == "1" ? 1 : 0);
    (split == "train" ? ds.train_indices : ds.test_indices).push_back(idx);
  }
  if (ds.subjects.empty()) {
    throw IngestError("manifest " + manifest.string() + " lists no subjects");
  }
  return ds;
}

// Per-region z-scoring: each column ends with mean 0 and population std 1.
// Zero-variance columns map to all-zeros. Idempotent.
template <typename Real>
BoldSignal<Real> zscore_normalize(const BoldSignal<Real>& s) {
  const std::size_t rows = s.timepoints(), cols = s.regions();
  if (rows < 2) {
    throw ContractError("zscore_normalize: needs at least 2 timepoints, subject " + s.subject_id);
  }
  BoldSignal<Real> out;
  out.subject_id = s.subject_id;
  out.series = Tensor<Real>::zeros({rows, cols});
  for (std::size_t j = 0; j < cols; ++j) {
    Real mean = Real(0);
    for (std::size_t i = 0; i < rows; ++i) mean += s.series.at(i, j);
    mean /= Real(rows);
    Real var = Real(0);
    for (std::size_t i = 0; i < rows; ++i) {
      const Real d = s.series.at(i, j) - mean;
      var += d * d;
    }
    var /= Real(rows);
    if (var <= Real(1e-24)) continue;  // constant region -> zeros
    const Real inv = Real(1) / std::sqrt(var);
    for (std::size_t i = 0; i < rows; ++i) out.series.at(i, j) = (s.series.at(i, j) - mean) * inv;
  }
  return out;
}

// Splits the series into n = floor(T'/P) contiguous non-overlapping windows;
// the trailing T' mod P timepoints are dropped.
template <typename Real>
WindowSet<Real> window(const BoldSignal<Real>& s, std::size_t P) {
  const std::size_t rows = s.timepoints(), cols = s.regions();
  if (P == 0 || P > rows) {
    throw ContractError("window: window size " + std::to_string(P) +
                        " out of range for series with " + std::to_string(rows) +
                        " timepoints (subject " + s.subject_id + ")");
  }
  WindowSet<Real> ws;
  ws.window_size = P;
  const std::size_t n = rows / P;
  for (std::size_t w = 0; w < n; ++w) {
    Tensor<Real> win = Tensor<Real>::zeros({P, cols});
    for (std::size_t i = 0; i < P; ++i)
      for (std::size_t j = 0; j < cols; ++j) win.at(i, j) = s.series.at(w * P + i, j);
    ws.windows.push_back(std::move(win));
  }
  return ws;
}

// Synthetic stand-in data. Class 0 is independent unit-variance noise per
// region. Class 1 is the same noise, except during even-indexed planting
// windows regions 0 and 1 additionally share a slow latent signal (unit
// variance AR(1), autocorrelation 0.9, restarted per window) scaled by the
// coupling strength. The shared component raises the pair's within-window
// correlation; its low-frequency character mimics BOLD-like fluctuations.
// Labels alternate, so any prefix split stays balanced. Deterministic in
// seed, per-subject streams.
template <typename Real>
LabeledDataset<Real> synth_generate(std::size_t n_subjects, std::size_t regions,
                                    std::size_t timepoints, double coupling_strength,
                                    std::uint64_t seed, std::size_t plant_window = 20,
                                    double train_fraction = 0.8) {
  if (n_subjects == 0 || regions == 0 || timepoints == 0 || plant_window == 0) {
    throw ContractError("synth_generate: sizes must be positive");
  }
  if (coupling_strength < 0) {
    throw ContractError("synth_generate: coupling_strength must be >= 0");
  }
  LabeledDataset<Real> ds;
  const double c = coupling_strength;
  for (std::size_t s = 0; s < n_subjects; ++s) {
    const int label = static_cast<int>(s % 2);
    Rng rng = Rng::stream(seed, s + 1);
    Tensor<Real> series = Tensor<Real>::zeros({timepoints, regions});
    for (std::size_t t = 0; t < timepoints; ++t)
      for (std::size_t j = 0; j < regions; ++j) series.at(t, j) = static_cast<Real>(rng.normal());
    if (label == 1 && c > 0 && regions >= 2) {
      const double phi = 0.9;
      const double innovation = std::sqrt(1.0 - phi * phi);
      double z = 0.0;
      for (std::size_t t = 0; t < timepoints; ++t) {
        if ((t / plant_window) % 2 != 0) continue;  // even-indexed windows only
        z = t % plant_window == 0 ? rng.normal() : phi * z + innovation * rng.normal();
        series.at(t, 0) += static_cast<Real>(c * z);
        series.at(t, 1) += static_cast<Real>(c * z);
      }
    }
    BoldSignal<Real> sig;
    char id[32];
    std::snprintf(id, sizeof(id), "s%04zu", s);
    sig.subject_id = id;
    sig.series = std::move(series);
    ds.subjects.push_back(std::move(sig));
    ds.labels.push_back(label);
  }
  const std::size_t n_train = static_cast<std::size_t>(
      std::lround(train_fraction * static_cast<double>(n_subjects)));
  for (std::size_t i = 0; i < n_subjects; ++i) {
    (i < n_train ? ds.train_indices : ds.test_indices).push_back(i);
  }
  return ds;
}

// Writes manifest + per-subject series CSVs. Shortest round-trip float
// formatting, so identical datasets produce byte-identical files.
template <typename Real>
void save_dataset(const LabeledDataset<Real>& ds, const std::filesystem::path& dir,
                  const std::vector<std::string>& manifest_comments = {}) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream manifest(dir / "manifest.csv", std::ios::binary);
  if (!manifest) {
    throw IngestError("cannot write manifest in " + dir.string());
  }
  for (const auto& c : manifest_comments) manifest << "# " << c << "\n";
  manifest << "subject_id,filename,label,split\n";
  std::vector<bool> in_train(ds.subjects.size(), false);
  for (std::size_t i : ds.train_indices) in_train[i] = true;
  for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
    const std::string file = ds.subjects[i].subject_id + ".csv";
    manifest << ds.subjects[i].subject_id << "," << file << "," << ds.labels[i] << ","
             << (in_train[i] ? "train" : "test") << "\n";
    std::ofstream series(dir / file, std::ios::binary);
    if (!series) {
      throw IngestError("cannot write series file " + (dir / file).string());
    }
    const auto& m = ds.subjects[i].series;
    for (std::size_t t = 0; t < m.rows(); ++t) {
      for (std::size_t j = 0; j < m.cols(); ++j) {
        if (j) series << ",";
        series << fmt_real(m.at(t, j));
      }
      series << "\n";
    }
  }
}

}  // namespace dgnc
