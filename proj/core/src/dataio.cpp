#include "dakd/dataio.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dakd/rng.hpp"

namespace dakd {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

void DatasetManifest::validate() const {
    if (stream_ids.empty()) throw DataError("manifest: no streams declared");
    if (std::find(stream_ids.begin(), stream_ids.end(), student_stream) == stream_ids.end())
        throw DataError("manifest: student stream '" + student_stream + "' is not a declared stream");
    std::set<std::string> seen;
    for (const auto& v : videos) {
        if (!seen.insert(v.id).second) throw DataError("manifest: duplicate video id " + v.id);
        if (v.split != "train" && v.split != "test")
            throw DataError("manifest: video " + v.id + " has unknown split " + v.split);
        if (v.label != 0 && v.label != 1)
            throw DataError("manifest: video " + v.id + " has non-binary label");
        if (v.frames < 1) throw DataError("manifest: video " + v.id + " has no frames");
        for (const auto& sid : stream_ids)
            if (!v.stream_paths.count(sid))
                throw DataError("manifest: video " + v.id + " is missing stream " + sid);
        if (v.stream_paths.size() != stream_ids.size())
            throw DataError("manifest: video " + v.id + " declares an unknown stream");
        if (v.split == "test" && v.label == 1 && v.intervals.empty())
            throw DataError("manifest: test anomalous video " + v.id + " has no anomaly intervals");
        for (auto [a, b] : v.intervals)
            if (a < 0 || b <= a || b > v.frames)
                throw DataError("manifest: video " + v.id + " has an invalid interval");
    }
}

int DatasetManifest::student_stream_index() const {
    auto it = std::find(stream_ids.begin(), stream_ids.end(), student_stream);
    if (it == stream_ids.end()) throw DataError("manifest: student stream not found");
    return static_cast<int>(it - stream_ids.begin());
}

static std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream ss(line);
    std::vector<std::string> out;
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("manifest: cannot open " + path.string());
    DatasetManifest m;
    std::string line;
    std::optional<VideoRecord> cur;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto tok = split_ws(line);
        if (tok.empty()) continue;
        const auto fail = [&](const std::string& msg) {
            throw DataError("manifest:" + std::to_string(lineno) + ": " + msg);
        };
        if (tok[0] == "streams") {
            m.stream_ids.assign(tok.begin() + 1, tok.end());
        } else if (tok[0] == "student_stream") {
            if (tok.size() != 2) fail("student_stream takes one id");
            m.student_stream = tok[1];
        } else if (tok[0] == "video") {
            if (cur) fail("nested video record");
            if (tok.size() != 2) fail("video takes one id");
            cur = VideoRecord{};
            cur->id = tok[1];
        } else if (tok[0] == "end") {
            if (!cur) fail("end outside a video record");
            m.videos.push_back(*cur);
            cur.reset();
        } else if (cur) {
            if (tok[0] == "split" && tok.size() == 2) cur->split = tok[1];
            else if (tok[0] == "label" && tok.size() == 2) cur->label = std::stoi(tok[1]);
            else if (tok[0] == "frames" && tok.size() == 2) cur->frames = std::stoi(tok[1]);
            else if (tok[0] == "class" && tok.size() == 2) cur->anomaly_class = tok[1] == "-" ? "" : tok[1];
            else if (tok[0] == "intervals" && tok.size() == 2) {
                if (tok[1] != "-") {
                    std::istringstream iv(tok[1]);
                    std::string part;
                    while (std::getline(iv, part, ',')) {
                        const auto dash = part.find('-');
                        if (dash == std::string::npos) fail("bad interval " + part);
                        cur->intervals.emplace_back(std::stoi(part.substr(0, dash)),
                                                    std::stoi(part.substr(dash + 1)));
                    }
                }
            } else if (tok[0] == "feature" && tok.size() == 3) {
                cur->stream_paths[tok[1]] = tok[2];
            } else {
                fail("unknown record field '" + tok[0] + "'");
            }
        } else {
            fail("unknown directive '" + tok[0] + "'");
        }
    }
    if (cur) throw DataError("manifest: unterminated video record");
    m.validate();
    return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("manifest: cannot write " + path.string());
    out << "# dakd-manifest v1\n";
    out << "streams";
    for (const auto& s : m.stream_ids) out << ' ' << s;
    out << "\nstudent_stream " << m.student_stream << "\n";
    for (const auto& v : m.videos) {
        out << "video " << v.id << "\n";
        out << "split " << v.split << "\n";
        out << "label " << v.label << "\n";
        out << "frames " << v.frames << "\n";
        out << "class " << (v.anomaly_class.empty() ? "-" : v.anomaly_class) << "\n";
        if (v.intervals.empty()) {
            out << "intervals -\n";
        } else {
            out << "intervals ";
            for (size_t i = 0; i < v.intervals.size(); ++i) {
                if (i) out << ',';
                out << v.intervals[i].first << '-' << v.intervals[i].second;
            }
            out << "\n";
        }
        for (const auto& sid : m.stream_ids) out << "feature " << sid << ' ' << v.stream_paths.at(sid) << "\n";
        out << "end\n";
    }
}

// ---------------------------------------------------------------------------
// DAKF binary format
// ---------------------------------------------------------------------------

static constexpr char kFeatureMagic[4] = {'D', 'A', 'K', 'F'};
static constexpr uint32_t kFeatureVersion = 1;

static void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

static uint32_t get_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(std::string("truncated ") + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_features(const fs::path& path, const FeatureFile& f) {
    if (f.clips < 1 || f.width < 1) throw FormatError("feature file: extents must be positive");
    if (f.values.size() != static_cast<size_t>(f.clips) * f.width)
        throw FormatError("feature file: payload length does not match header");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("feature file: cannot write " + path.string());
    out.write(kFeatureMagic, 4);
    put_u32(out, kFeatureVersion);
    put_u32(out, static_cast<uint32_t>(f.clips));
    put_u32(out, static_cast<uint32_t>(f.width));
    // float32 little-endian payload; assumes an LE host, as does the reader.
    out.write(reinterpret_cast<const char*>(f.values.data()),
              static_cast<std::streamsize>(f.values.size() * sizeof(float)));
    if (!out) throw DataError("feature file: write failed for " + path.string());
}

FeatureFile read_features(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("feature file: cannot open " + path.string());
    char magic[4];
    if (!in.read(magic, 4)) throw FormatError("feature file: truncated header");
    if (std::memcmp(magic, kFeatureMagic, 4) != 0) throw FormatError("feature file: bad magic");
    const uint32_t version = get_u32(in, "feature header");
    if (version != kFeatureVersion)
        throw FormatError("feature file: unsupported version " + std::to_string(version));
    FeatureFile f;
    f.clips = static_cast<int>(get_u32(in, "feature header"));
    f.width = static_cast<int>(get_u32(in, "feature header"));
    if (f.clips < 1 || f.width < 1) throw FormatError("feature file: zero extent in header");
    const size_t count = static_cast<size_t>(f.clips) * f.width;
    f.values.resize(count);
    if (!in.read(reinterpret_cast<char*>(f.values.data()),
                 static_cast<std::streamsize>(count * sizeof(float))))
        throw FormatError("feature file: payload shorter than declared clip count");
    return f;
}

Tensor segment_pool(const Tensor& clip_features, int n_s) {
    const int n_c = clip_features.rows;
    const int d = clip_features.cols;
    if (n_c < 1 || n_s < 1) throw ShapeError("segment_pool: extents must be positive");
    Tensor out(n_s, d, 0.0);
    for (int s = 0; s < n_s; ++s) {
        const int lo = static_cast<int>(static_cast<int64_t>(s) * n_c / n_s);
        const int hi = static_cast<int>(static_cast<int64_t>(s + 1) * n_c / n_s);
        if (hi > lo) {
            for (int c = lo; c < hi; ++c)
                for (int j = 0; j < d; ++j) out.at(s, j) += clip_features.at(c, j);
            for (int j = 0; j < d; ++j) out.at(s, j) /= (hi - lo);
        } else {
            const int c = std::min(lo, n_c - 1);
            for (int j = 0; j < d; ++j) out.at(s, j) = clip_features.at(c, j);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
    if (train_normal < 1 || train_anomalous < 1 || test_normal < 1 || test_anomalous < 1)
        throw DataError("synth: all split counts must be positive");
    if (frames_min < clip_len || frames_max < frames_min)
        throw DataError("synth: bad frame count range");
    if (clip_len < 1) throw DataError("synth: clip length must be positive");
    if (stream_dims.empty()) throw DataError("synth: at least one stream");
    if (num_classes < 1) throw DataError("synth: at least one anomaly class");
    if (!(anomaly_fraction > 0.0 && anomaly_fraction < 1.0))
        throw DataError("synth: anomaly fraction must be in (0,1)");
    if (student_stream < 0 || student_stream >= static_cast<int>(stream_dims.size()))
        throw DataError("synth: student stream index out of range");
    const auto g = effective_gains();
    for (int c = 0; c < num_classes; ++c) {
        bool visible = false;
        for (size_t t = 0; t < g.size(); ++t) visible = visible || g[t][c] > 0.0;
        if (!visible) throw DataError("synth: class " + std::to_string(c) + " visible to no stream");
    }
}

std::vector<std::vector<double>> SynthConfig::effective_gains() const {
    if (!gains.empty()) {
        if (gains.size() != stream_dims.size()) throw DataError("synth: gains rows != stream count");
        for (const auto& row : gains)
            if (static_cast<int>(row.size()) != num_classes)
                throw DataError("synth: gains cols != class count");
        return gains;
    }
    // Default complementarity map for T=3, 3 classes: stream 0 -> {c0, c2},
    // stream 1 -> {c1, c2}, last stream sees everything weakly. Other shapes
    // fall back to every stream seeing every class.
    const int T = static_cast<int>(stream_dims.size());
    std::vector<std::vector<double>> g(T, std::vector<double>(num_classes, 1.0));
    if (T == 3 && num_classes == 3) {
        g[0] = {1.0, 0.0, 1.0};
        g[1] = {0.0, 1.0, 1.0};
        g[2] = {weak_gain, weak_gain, weak_gain};
    }
    return g;
}

DatasetManifest generate_synthetic(const SynthConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir / "features");

    const int T = static_cast<int>(cfg.stream_dims.size());
    const auto gains = cfg.effective_gains();
    Rng rng(cfg.seed);

    // Class-specific unit directions, one per (class, stream).
    std::vector<std::vector<std::vector<double>>> directions(cfg.num_classes);
    for (int c = 0; c < cfg.num_classes; ++c) {
        directions[c].resize(T);
        for (int t = 0; t < T; ++t) {
            std::vector<double> u(cfg.stream_dims[t]);
            double norm = 0.0;
            for (double& x : u) {
                x = rng.normal();
                norm += x * x;
            }
            norm = std::sqrt(norm);
            for (double& x : u) x /= norm;
            directions[c][t] = std::move(u);
        }
    }

    DatasetManifest m;
    for (int t = 0; t < T; ++t) m.stream_ids.push_back("s" + std::to_string(t));
    m.student_stream = "s" + std::to_string(cfg.student_stream);

    int anomalous_counter = 0;
    auto make_video = [&](const std::string& split, int label, int index) {
        VideoRecord v;
        v.id = split + (label ? "_anom_" : "_norm_") + std::to_string(index);
        v.split = split;
        v.label = label;
        v.frames = cfg.frames_min + rng.uniform_int(cfg.frames_max - cfg.frames_min + 1);
        const int n_c = (v.frames + cfg.clip_len - 1) / cfg.clip_len;

        int cls = -1;
        if (label == 1) {
            cls = anomalous_counter++ % cfg.num_classes;
            v.anomaly_class = "c" + std::to_string(cls);
            int len = static_cast<int>(std::lround(cfg.anomaly_fraction * v.frames));
            len = std::max(cfg.clip_len, std::min(len, v.frames));
            const int start = rng.uniform_int(v.frames - len + 1);
            v.intervals.emplace_back(start, start + len);
        }

        for (int t = 0; t < T; ++t) {
            FeatureFile f;
            f.clips = n_c;
            f.width = cfg.stream_dims[t];
            f.values.resize(static_cast<size_t>(n_c) * f.width);
            for (float& x : f.values) x = static_cast<float>(rng.normal());
            if (cls >= 0 && gains[t][cls] > 0.0) {
                const double amp = cfg.snr * gains[t][cls];
                for (int c = 0; c < n_c; ++c) {
                    const int f0 = c * cfg.clip_len;
                    const int f1 = std::min(v.frames, f0 + cfg.clip_len);
                    const auto [a, b] = v.intervals[0];
                    if (f1 > a && f0 < b) {
                        for (int j = 0; j < f.width; ++j)
                            f.values[static_cast<size_t>(c) * f.width + j] +=
                                static_cast<float>(amp * directions[cls][t][j]);
                    }
                }
            }
            const std::string rel = "features/" + v.id + "_s" + std::to_string(t) + ".dakf";
            write_features(out_dir / rel, f);
            v.stream_paths["s" + std::to_string(t)] = rel;
        }
        m.videos.push_back(std::move(v));
    };

    for (int i = 0; i < cfg.train_normal; ++i) make_video("train", 0, i);
    for (int i = 0; i < cfg.train_anomalous; ++i) make_video("train", 1, i);
    for (int i = 0; i < cfg.test_normal; ++i) make_video("test", 0, i);
    for (int i = 0; i < cfg.test_anomalous; ++i) make_video("test", 1, i);

    m.validate();
    write_manifest(m, out_dir / "manifest.txt");
    return m;
}

// ---------------------------------------------------------------------------
// FeatureStore
// ---------------------------------------------------------------------------

std::vector<int> FeatureStore::indices(const std::string& split, int label) const {
    std::vector<int> out;
    for (size_t i = 0; i < videos.size(); ++i)
        if (videos[i].record.split == split && videos[i].record.label == label)
            out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> FeatureStore::stream_dims() const {
    if (videos.empty()) throw DataError("dataset: empty");
    std::vector<int> dims;
    for (const auto& s : videos[0].streams) dims.push_back(s.cols);
    return dims;
}

FeatureStore load_dataset(const fs::path& manifest_path, int n_s) {
    FeatureStore store;
    store.n_s = n_s;
    store.manifest = read_manifest(manifest_path);
    const fs::path base = manifest_path.parent_path();
    for (const auto& rec : store.manifest.videos) {
        VideoFeatures vf;
        vf.record = rec;
        for (const auto& sid : store.manifest.stream_ids) {
            const FeatureFile f = read_features(base / rec.stream_paths.at(sid));
            Tensor clips(f.clips, f.width);
            for (size_t i = 0; i < f.values.size(); ++i) clips.data[i] = f.values[i];
            vf.streams.push_back(segment_pool(clips, n_s));
        }
        store.videos.push_back(std::move(vf));
    }
    return store;
}

FeatureStore select_stream(const FeatureStore& store, int stream_index) {
    if (stream_index < 0 || stream_index >= static_cast<int>(store.manifest.stream_ids.size()))
        throw DataError("select_stream: index out of range");
    FeatureStore out;
    out.n_s = store.n_s;
    out.source_stream = stream_index;
    const std::string sid = store.manifest.stream_ids[stream_index];
    out.manifest.stream_ids = {sid};
    out.manifest.student_stream = sid;
    for (const auto& v : store.videos) {
        VideoFeatures vf;
        vf.record = v.record;
        vf.record.stream_paths = {{sid, v.record.stream_paths.at(sid)}};
        vf.streams = {v.streams[stream_index]};
        out.videos.push_back(std::move(vf));
        out.manifest.videos.push_back(out.videos.back().record);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

static constexpr char kCkptMagic[4] = {'D', 'A', 'K', 'C'};
static constexpr uint32_t kCkptVersion = 1;

static nlohmann::json spec_to_json(const ModelSpec& s) {
    return {
        {"stream_dims", s.stream_dims},
        {"dim", s.dim},
        {"heads", s.heads},
        {"bucket_cap", s.bucket_cap},
        {"ffn_hidden", s.ffn_hidden},
        {"head_hidden1", s.head_hidden1},
        {"head_hidden2", s.head_hidden2},
        {"include_cross", s.include_cross},
        {"use_tam", s.use_tam},
        {"train_rel_embed", s.train_rel_embed},
        {"mask", {s.attn_mask.self_c2c, s.attn_mask.cross_c2c, s.attn_mask.c2p, s.attn_mask.p2c}},
    };
}

static ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.stream_dims = j.at("stream_dims").get<std::vector<int>>();
    s.dim = j.at("dim");
    s.heads = j.at("heads");
    s.bucket_cap = j.at("bucket_cap");
    s.ffn_hidden = j.at("ffn_hidden");
    s.head_hidden1 = j.at("head_hidden1");
    s.head_hidden2 = j.at("head_hidden2");
    s.include_cross = j.at("include_cross");
    s.use_tam = j.at("use_tam");
    s.train_rel_embed = j.at("train_rel_embed");
    const auto m = j.at("mask");
    s.attn_mask.self_c2c = m.at(0);
    s.attn_mask.cross_c2c = m.at(1);
    s.attn_mask.c2p = m.at(2);
    s.attn_mask.p2c = m.at(3);
    return s;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("checkpoint: cannot write " + path.string());
    out.write(kCkptMagic, 4);
    put_u32(out, kCkptVersion);
    nlohmann::json meta = {{"kind", ckpt.kind},
                           {"stream", ckpt.stream},
                           {"spec", spec_to_json(ckpt.spec)}};
    const std::string meta_str = meta.dump();
    put_u32(out, static_cast<uint32_t>(meta_str.size()));
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    put_u32(out, static_cast<uint32_t>(ckpt.params.size()));
    for (const auto& [name, t] : ckpt.params) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<uint32_t>(t.rows));
        put_u32(out, static_cast<uint32_t>(t.cols));
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw DataError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path.string());
    char magic[4];
    if (!in.read(magic, 4)) throw FormatError("checkpoint: truncated header");
    if (std::memcmp(magic, kCkptMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
    const uint32_t version = get_u32(in, "checkpoint header");
    if (version != kCkptVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const uint32_t meta_len = get_u32(in, "checkpoint header");
    std::string meta_str(meta_len, '\0');
    if (!in.read(meta_str.data(), meta_len)) throw FormatError("checkpoint: truncated metadata");
    Checkpoint ckpt;
    try {
        const auto meta = nlohmann::json::parse(meta_str);
        ckpt.kind = meta.at("kind");
        ckpt.stream = meta.value("stream", -1);
        ckpt.spec = spec_from_json(meta.at("spec"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad metadata: ") + e.what());
    }
    const uint32_t n_params = get_u32(in, "checkpoint header");
    for (uint32_t i = 0; i < n_params; ++i) {
        const uint32_t name_len = get_u32(in, "checkpoint entry");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw FormatError("checkpoint: truncated entry name");
        const int rows = static_cast<int>(get_u32(in, "checkpoint entry"));
        const int cols = static_cast<int>(get_u32(in, "checkpoint entry"));
        if (rows < 1 || cols < 1) throw FormatError("checkpoint: bad tensor extents");
        Tensor t(rows, cols);
        if (!in.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(double))))
            throw FormatError("checkpoint: truncated tensor payload");
        ckpt.params[name] = std::move(t);
    }
    return ckpt;
}

}  // namespace dakd
