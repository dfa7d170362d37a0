#include "jamident/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "jamident/parallel.hpp"

namespace jamident::dataset {

namespace fs = std::filesystem;
using nlohmann::json;

DatasetConfig DatasetConfig::desk_scale() { return {}; }

DatasetConfig DatasetConfig::full_scale() {
    DatasetConfig c;
    c.isnr_grid_db.clear();
    for (int v = -14; v <= 8; v += 2) c.isnr_grid_db.push_back(v);
    c.samples_per_type_per_isnr = 400;
    return c;
}

std::size_t DatasetConfig::num_samples() const {
    return siggen::kNumJammingTypes * isnr_grid_db.size() * samples_per_type_per_isnr;
}

void DatasetConfig::validate() const {
    if (isnr_grid_db.empty()) throw std::invalid_argument("dataset: empty ISNR grid");
    if (samples_per_type_per_isnr == 0) throw std::invalid_argument("dataset: samples_per_type_per_isnr must be positive");
    if (train_parts == 0 || test_parts == 0) throw std::invalid_argument("dataset: split parts must be positive");
    if (stft.n_fft != tfmap::kImageSize || stft.frames != tfmap::kImageSize)
        throw std::invalid_argument("dataset: the STFT must produce 40 x 40 maps");
    if (scenario.n_samples < stft.required_samples())
        throw std::invalid_argument("dataset: signal shorter than the STFT needs");
}

std::string DatasetManifest::to_json() const {
    json j;
    j["version"] = version;
    j["num_classes"] = num_classes;
    j["class_names"] = class_names;
    j["isnr_grid_db"] = isnr_grid_db;
    j["samples_per_type_per_isnr"] = samples_per_type_per_isnr;
    j["num_samples"] = num_samples;
    j["split"] = {{"train_parts", train_parts}, {"test_parts", test_parts}, {"stratified_by", {"type", "isnr"}},
                  {"train_count", train_indices.size()}, {"test_count", test_indices.size()}};
    j["fs_hz"] = fs_hz;
    j["signal_samples"] = signal_samples;
    j["snr_db"] = snr_db;
    j["stft"] = {{"n_fft", stft.n_fft}, {"hop", stft.hop}, {"frames", stft.frames}, {"window", "hann"}};
    j["image_shape"] = {tfmap::kImageChannels, tfmap::kImageSize, tfmap::kImageSize};
    j["seeds"] = {{"dataset", seed}};
    j["files"] = {{"images", "images.f32"}, {"labels", "labels.u8"}, {"isnr", "isnr.f32"}};
    j["train_indices"] = train_indices;
    j["test_indices"] = test_indices;
    return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    DatasetManifest m;
    try {
        const auto j = json::parse(text);
        m.version = j.at("version").get<int>();
        m.num_classes = j.at("num_classes").get<std::size_t>();
        m.class_names = j.at("class_names").get<std::vector<std::string>>();
        m.isnr_grid_db = j.at("isnr_grid_db").get<std::vector<double>>();
        m.samples_per_type_per_isnr = j.at("samples_per_type_per_isnr").get<std::size_t>();
        m.num_samples = j.at("num_samples").get<std::size_t>();
        m.train_parts = j.at("split").at("train_parts").get<std::size_t>();
        m.test_parts = j.at("split").at("test_parts").get<std::size_t>();
        m.fs_hz = j.at("fs_hz").get<double>();
        m.signal_samples = j.at("signal_samples").get<std::size_t>();
        m.snr_db = j.at("snr_db").get<double>();
        m.stft.n_fft = j.at("stft").at("n_fft").get<std::size_t>();
        m.stft.hop = j.at("stft").at("hop").get<std::size_t>();
        m.stft.frames = j.at("stft").at("frames").get<std::size_t>();
        m.seed = j.at("seeds").at("dataset").get<std::uint64_t>();
        m.train_indices = j.at("train_indices").get<std::vector<std::size_t>>();
        m.test_indices = j.at("test_indices").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("manifest.json: ") + e.what());
    }
    if (m.version != 1) throw std::runtime_error("manifest.json: unsupported version " + std::to_string(m.version));
    if (m.num_classes != siggen::kNumJammingTypes) throw std::runtime_error("manifest.json: expected 8 classes");
    return m;
}

std::span<const float> Dataset::image(std::size_t i) const {
    if (i >= size()) throw std::out_of_range("dataset: sample index out of range");
    return std::span<const float>(images).subspan(i * tfmap::kImagePixels, tfmap::kImagePixels);
}

tfmap::Spectrogram Dataset::spectrogram(std::size_t i) const {
    tfmap::Spectrogram s;
    const auto src = image(i);
    std::copy(src.begin(), src.end(), s.pixels.begin());
    return s;
}

const std::vector<std::size_t>& Dataset::split(const std::string& name) const {
    if (name == "train") return manifest.train_indices;
    if (name == "test") return manifest.test_indices;
    throw std::invalid_argument("dataset: unknown split '" + name + "' (expected train or test)");
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t type, std::size_t isnr_index, std::size_t k) {
    return mix_seed(mix_seed(mix_seed(dataset_seed, type), isnr_index), k);
}

Dataset generate(const DatasetConfig& cfg, std::size_t workers) {
    cfg.validate();
    const std::size_t per = cfg.samples_per_type_per_isnr, n_isnr = cfg.isnr_grid_db.size();
    const std::size_t n = cfg.num_samples();
    const std::size_t n_train = per * cfg.train_parts / (cfg.train_parts + cfg.test_parts);

    Dataset ds;
    auto& m = ds.manifest;
    for (auto t : siggen::kAllJammingTypes) m.class_names.emplace_back(siggen::to_string(t));
    m.isnr_grid_db = cfg.isnr_grid_db;
    m.samples_per_type_per_isnr = per;
    m.num_samples = n;
    m.train_parts = cfg.train_parts;
    m.test_parts = cfg.test_parts;
    m.fs_hz = cfg.scenario.fs_hz;
    m.signal_samples = cfg.scenario.n_samples;
    m.snr_db = cfg.scenario.snr_db;
    m.stft = cfg.stft;
    m.seed = cfg.seed;

    ds.images.assign(n * tfmap::kImagePixels, 0.0f);
    ds.labels.assign(n, 0);
    ds.isnr_db.assign(n, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
        ((i % per) < n_train ? m.train_indices : m.test_indices).push_back(i);
        ds.labels[i] = static_cast<std::uint8_t>(i / (per * n_isnr));
        ds.isnr_db[i] = static_cast<float>(cfg.isnr_grid_db[(i / per) % n_isnr]);
    }

    parallel_for(n, workers, [&](std::size_t, std::size_t i) {
        const std::size_t type = i / (per * n_isnr), isnr_index = (i / per) % n_isnr, k = i % per;
        const auto ex = siggen::synth_example(siggen::jamming_type_from_label(static_cast<int>(type)),
                                              cfg.isnr_grid_db[isnr_index], cfg.scenario,
                                              sample_seed(cfg.seed, type, isnr_index, k));
        const auto img = tfmap::signal_to_image(ex.received, cfg.stft);
        std::copy(img.pixels.begin(), img.pixels.end(), ds.images.begin() + static_cast<std::ptrdiff_t>(i * tfmap::kImagePixels));
    });
    return ds;
}

void write_f32(const fs::path& p, std::span<const float> values) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
    std::vector<std::uint32_t> words(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto w = std::bit_cast<std::uint32_t>(values[i]);
        if constexpr (std::endian::native == std::endian::big)
            w = (w >> 24) | ((w >> 8) & 0xff00u) | ((w << 8) & 0xff0000u) | (w << 24);
        words[i] = w;
    }
    out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
    if (!out) throw std::runtime_error("write failed: " + p.string());
}

std::vector<float> read_f32(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0) throw std::runtime_error(p.string() + ": size is not a multiple of 4 bytes");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t w;
        std::memcpy(&w, bytes.data() + 4 * i, 4);
        if constexpr (std::endian::native == std::endian::big)
            w = (w >> 24) | ((w >> 8) & 0xff00u) | ((w << 8) & 0xff0000u) | (w << 24);
        out[i] = std::bit_cast<float>(w);
    }
    return out;
}

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

void write(const Dataset& ds, const fs::path& dir) {
    fs::create_directories(dir);
    write_f32(dir / "images.f32", ds.images);
    write_f32(dir / "isnr.f32", ds.isnr_db);
    {
        std::ofstream out(dir / "labels.u8", std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(ds.labels.data()), static_cast<std::streamsize>(ds.labels.size()));
        if (!out) throw std::runtime_error("write failed: labels.u8");
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << ds.manifest.to_json();
    if (!out) throw std::runtime_error("write failed: manifest.json");
}

Dataset read(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.json")) throw std::runtime_error("no dataset at " + dir.string() + " (manifest.json missing)");
    Dataset ds;
    ds.manifest = DatasetManifest::from_json(read_text(dir / "manifest.json"));
    ds.images = read_f32(dir / "images.f32");
    ds.isnr_db = read_f32(dir / "isnr.f32");
    const auto raw = read_text(dir / "labels.u8");
    ds.labels.assign(raw.begin(), raw.end());

    const std::size_t n = ds.manifest.num_samples;
    if (ds.labels.size() != n || ds.isnr_db.size() != n || ds.images.size() != n * tfmap::kImagePixels)
        throw std::runtime_error("dataset at " + dir.string() + ": blob sizes disagree with manifest (" +
                                 std::to_string(n) + " samples)");
    if (ds.manifest.train_indices.size() + ds.manifest.test_indices.size() != n)
        throw std::runtime_error("dataset: split does not cover every sample");
    for (auto i : ds.manifest.train_indices)
        if (i >= n) throw std::runtime_error("dataset: train index out of range");
    for (auto i : ds.manifest.test_indices)
        if (i >= n) throw std::runtime_error("dataset: test index out of range");
    for (auto y : ds.labels)
        if (y >= ds.manifest.num_classes) throw std::runtime_error("dataset: label out of range");
    return ds;
}

DatasetManifest gen_dataset(const DatasetConfig& cfg, const fs::path& out_dir, std::size_t workers) {
    auto ds = generate(cfg, workers);
    write(ds, out_dir);
    return ds.manifest;
}

} // namespace jamident::dataset
