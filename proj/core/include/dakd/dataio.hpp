#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dakd/models.hpp"
#include "dakd/tensor.hpp"

namespace dakd {

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct VideoRecord {
    std::string id;
    std::string split;                             // "train" or "test"
    int label = 0;                                 // video-level 0/1
    int frames = 0;
    std::string anomaly_class;                     // empty for normal videos
    std::vector<std::pair<int, int>> intervals;    // [start, end) frame ranges
    std::map<std::string, std::string> stream_paths;  // stream id -> feature file
};

struct DatasetManifest {
    std::vector<std::string> stream_ids;
    std::string student_stream;
    std::vector<VideoRecord> videos;

    void validate() const;
    int student_stream_index() const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// DAKF binary feature files: magic "DAKF", u32 version, u32 clip count,
// u32 width, then n_c * d_t float32 little-endian, row-major.
// ---------------------------------------------------------------------------

struct FeatureFile {
    int clips = 0;
    int width = 0;
    std::vector<float> values;  // row-major clips x width
};

void write_features(const std::filesystem::path& path, const FeatureFile& f);
FeatureFile read_features(const std::filesystem::path& path);

// Pools n_c clip vectors into n_s segments: segment s averages clips in
// [floor(s*n_c/n_s), floor((s+1)*n_c/n_s)); an empty range takes the single
// clamped nearest clip.
Tensor segment_pool(const Tensor& clip_features, int n_s);

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

struct SynthConfig {
    int train_normal = 80;
    int train_anomalous = 80;
    int test_normal = 30;
    int test_anomalous = 30;
    int frames_min = 1024;
    int frames_max = 2048;
    int clip_len = 16;
    std::vector<int> stream_dims = {64, 64, 32};
    int num_classes = 3;
    // gain[stream][class]: per-stream visibility multiplier for each anomaly
    // class. Default mirrors a complementary-backbone layout: stream 0 sees
    // classes 0 and 2, stream 1 sees classes 1 and 2, stream 2 sees all
    // classes weakly.
    std::vector<std::vector<double>> gains;
    double snr = 6.0;
    double weak_gain = 0.55;     // multiplier for "weak" visibility entries
    double anomaly_fraction = 0.073;
    int student_stream = 2;
    uint64_t seed = 42;

    void validate() const;
    std::vector<std::vector<double>> effective_gains() const;
};

// Writes feature files plus manifest.txt under out_dir; returns the manifest.
DatasetManifest generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// In-memory dataset: pooled per-video segment tensors.
// ---------------------------------------------------------------------------

struct VideoFeatures {
    VideoRecord record;
    std::vector<Tensor> streams;  // per stream, n_s x d_t
};

struct FeatureStore {
    DatasetManifest manifest;
    std::vector<VideoFeatures> videos;
    int n_s = 32;
    int source_stream = -1;  // set by select_stream on single-stream views

    std::vector<int> indices(const std::string& split, int label) const;
    std::vector<int> stream_dims() const;
};

FeatureStore load_dataset(const std::filesystem::path& manifest_path, int n_s = 32);

// Single-stream view of a dataset (for per-backbone baselines); the chosen
// stream becomes both the only stream and the designated student stream.
FeatureStore select_stream(const FeatureStore& store, int stream_index);

// ---------------------------------------------------------------------------
// Checkpoints: magic "DAKC", u32 version, model spec + named f64 tensors.
// Round-trips are bit-exact.
// ---------------------------------------------------------------------------

struct Checkpoint {
    std::string kind;  // "teacher" or "student"
    int stream = -1;   // source stream index for single-stream models
    ModelSpec spec;
    ParamMap params;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dakd
