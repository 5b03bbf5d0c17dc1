#include "tiltfield/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>
#include <zlib.h>

#include "tiltfield/error.hpp"

namespace tiltfield {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace {

constexpr std::size_t kMrcHeaderBytes = 1024;
constexpr char kCheckpointMagic[4] = {'T', 'F', 'N', 'V'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::string& buf, std::size_t offset, T value) {
    std::memcpy(buf.data() + offset, &value, sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t offset) {
    T value;
    std::memcpy(&value, buf.data() + offset, sizeof(T));
    return value;
}

template <typename T>
void append(std::string& buf, T value) {
    buf.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

}  // namespace

// ---- plumbing ----

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(IoError::Kind::NotFound, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError(IoError::Kind::Unwritable, "cannot write " + path.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw IoError(IoError::Kind::Unwritable, "short write to " + path.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError(IoError::Kind::Unwritable, "cannot move into place: " + path.string());
    }
}

// ---- MRC ----

MrcData read_mrc(const fs::path& path) {
    const std::string buf = read_file(path);
    if (buf.size() < kMrcHeaderBytes) {
        throw IoError(IoError::Kind::Truncated, path.string() + ": header shorter than 1024 bytes");
    }
    if (buf.compare(208, 4, "MAP ") != 0) {
        throw IoError(IoError::Kind::BadMagic, path.string() + ": missing MAP magic at byte 208");
    }
    if (static_cast<unsigned char>(buf[212]) != 0x44 && static_cast<unsigned char>(buf[212]) != 0x41) {
        throw IoError(IoError::Kind::UnsupportedMode, path.string() + ": big-endian MRC files are not supported");
    }
    MrcData out;
    MrcHeader& h = out.header;
    h.nx = get<std::int32_t>(buf, 0);
    h.ny = get<std::int32_t>(buf, 4);
    h.nz = get<std::int32_t>(buf, 8);
    h.mode = get<std::int32_t>(buf, 12);
    h.mx = get<std::int32_t>(buf, 28);
    h.my = get<std::int32_t>(buf, 32);
    h.mz = get<std::int32_t>(buf, 36);
    for (int a = 0; a < 3; ++a) {
        h.cell[a] = get<float>(buf, 40 + 4 * a);
    }
    h.dmin = get<float>(buf, 76);
    h.dmax = get<float>(buf, 80);
    h.dmean = get<float>(buf, 84);
    h.ispg = get<std::int32_t>(buf, 88);
    h.nsymbt = get<std::int32_t>(buf, 92);
    h.nversion = get<std::int32_t>(buf, 108);
    h.rms = get<float>(buf, 216);
    if (h.mode != 2) {
        throw IoError(IoError::Kind::UnsupportedMode,
                      path.string() + ": MRC mode " + std::to_string(h.mode) + " is not supported (need mode 2)");
    }
    if (h.nx < 1 || h.ny < 1 || h.nz < 1 || h.nsymbt < 0) {
        throw IoError(IoError::Kind::Parse, path.string() + ": invalid MRC dimensions");
    }
    const std::size_t count = static_cast<std::size_t>(h.nx) * h.ny * h.nz;
    const std::size_t offset = kMrcHeaderBytes + static_cast<std::size_t>(h.nsymbt);
    if (buf.size() < offset + count * sizeof(float)) {
        throw IoError(IoError::Kind::Truncated, path.string() + ": payload shorter than nx*ny*nz floats");
    }
    out.values.resize(count);
    std::memcpy(out.values.data(), buf.data() + offset, count * sizeof(float));
    return out;
}

void write_mrc(const fs::path& path, int nx, int ny, int nz, std::span<const float> values, double voxel_size,
               int ispg) {
    if (nx < 1 || ny < 1 || nz < 1) {
        throw InvalidArgument("MRC dimensions must be positive");
    }
    const std::size_t count = static_cast<std::size_t>(nx) * ny * nz;
    if (values.size() != count) {
        throw ShapeMismatch("MRC payload size does not match dimensions");
    }
    std::string buf(kMrcHeaderBytes, '\0');
    put<std::int32_t>(buf, 0, nx);
    put<std::int32_t>(buf, 4, ny);
    put<std::int32_t>(buf, 8, nz);
    put<std::int32_t>(buf, 12, 2);
    put<std::int32_t>(buf, 28, nx);
    put<std::int32_t>(buf, 32, ny);
    put<std::int32_t>(buf, 36, nz);
    put<float>(buf, 40, static_cast<float>(nx * voxel_size));
    put<float>(buf, 44, static_cast<float>(ny * voxel_size));
    put<float>(buf, 48, static_cast<float>(nz * voxel_size));
    put<float>(buf, 52, 90.0f);
    put<float>(buf, 56, 90.0f);
    put<float>(buf, 60, 90.0f);
    put<std::int32_t>(buf, 64, 1);
    put<std::int32_t>(buf, 68, 2);
    put<std::int32_t>(buf, 72, 3);

    double lo = values[0];
    double hi = values[0];
    double sum = 0.0;
    for (float v : values) {
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
        sum += v;
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (float v : values) {
        sq += (v - mean) * (v - mean);
    }
    put<float>(buf, 76, static_cast<float>(lo));
    put<float>(buf, 80, static_cast<float>(hi));
    put<float>(buf, 84, static_cast<float>(mean));
    put<std::int32_t>(buf, 88, ispg);
    put<std::int32_t>(buf, 92, 0);
    put<std::int32_t>(buf, 108, 20140);
    std::memcpy(buf.data() + 208, "MAP ", 4);
    buf[212] = 0x44;
    buf[213] = 0x44;
    put<float>(buf, 216, static_cast<float>(std::sqrt(sq / static_cast<double>(count))));
    put<std::int32_t>(buf, 220, 1);
    const char label[] = "tiltfield";
    std::memcpy(buf.data() + 224, label, sizeof(label) - 1);

    buf.append(reinterpret_cast<const char*>(values.data()), count * sizeof(float));
    write_file_atomic(path, buf);
}

VoxelVolume read_volume(const fs::path& path) {
    MrcData mrc = read_mrc(path);
    GridSpec grid{mrc.header.nx, mrc.header.ny, mrc.header.nz, mrc.header.voxel_size()};
    if (!(grid.voxel_size > 0.0)) {
        grid.voxel_size = 1.0;
    }
    VoxelVolume volume(grid);
    std::copy(mrc.values.begin(), mrc.values.end(), volume.data().begin());
    return volume;
}

void write_volume(const VoxelVolume& volume, const fs::path& path) {
    const GridSpec& g = volume.grid();
    std::vector<float> values(volume.data().begin(), volume.data().end());
    write_mrc(path, g.n1, g.n2, g.n3, values, g.voxel_size, 1);
}

TiltSeries read_stack(const fs::path& path, const std::vector<double>& angles) {
    MrcData mrc = read_mrc(path);
    const MrcHeader& h = mrc.header;
    if (h.nx != h.ny) {
        throw ShapeMismatch(path.string() + ": stack images must be square");
    }
    if (!angles.empty() && angles.size() != static_cast<std::size_t>(h.nz)) {
        throw ShapeMismatch(path.string() + ": stack depth " + std::to_string(h.nz) + " does not match " +
                            std::to_string(angles.size()) + " angles");
    }
    TiltSeries series;
    const std::size_t plane = static_cast<std::size_t>(h.nx) * h.ny;
    for (int z = 0; z < h.nz; ++z) {
        Image img(h.nx);
        std::copy(mrc.values.begin() + static_cast<std::ptrdiff_t>(z * plane),
                  mrc.values.begin() + static_cast<std::ptrdiff_t>((z + 1) * plane), img.data().begin());
        series.images.push_back(std::move(img));
    }
    series.angles = angles;
    if (series.angles.empty()) {
        series.angles.assign(series.images.size(), 0.0);
    }
    return series;
}

void write_stack(const TiltSeries& series, const fs::path& path, double pixel_size) {
    if (series.images.empty()) {
        throw InvalidArgument("cannot write an empty stack");
    }
    const int n = series.image_size();
    std::vector<float> values;
    values.reserve(static_cast<std::size_t>(n) * n * series.size());
    for (const Image& img : series.images) {
        if (img.n() != n) {
            throw ShapeMismatch("stack images differ in size");
        }
        values.insert(values.end(), img.data().begin(), img.data().end());
    }
    write_mrc(path, n, n, static_cast<int>(series.size()), values, pixel_size, 0);
}

void write_image(const Image& image, const fs::path& path, double pixel_size) {
    std::vector<float> values(image.data().begin(), image.data().end());
    write_mrc(path, image.n(), image.n(), 1, values, pixel_size, 0);
}

// ---- text sidecars ----

std::vector<double> read_angles(const fs::path& path) {
    const std::string text = read_file(path);
    std::vector<double> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty()) {
            continue;
        }
        double v = 0.0;
        const char* first = t.data();
        const char* last = t.data() + t.size();
        if (*first == '+') {
            ++first;
        }
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
            throw IoError(IoError::Kind::Parse,
                          path.string() + ":" + std::to_string(lineno) + ": not a number: '" + t + "'");
        }
        out.push_back(v);
    }
    return out;
}

void write_angles(const fs::path& path, const std::vector<double>& degrees) {
    std::string text;
    char buf[64];
    for (double d : degrees) {
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), d);
        text.append(buf, ptr);
        text.push_back('\n');
    }
    write_file_atomic(path, text);
}

nlohmann::json read_json(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::Parse, path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& value) { write_file_atomic(path, value.dump(2) + "\n"); }

std::vector<DeformParams> read_deform_params(const fs::path& path) {
    const nlohmann::json j = read_json(path);
    try {
        return j.get<std::vector<DeformParams>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::Parse, path.string() + ": " + e.what());
    } catch (const InvalidArgument& e) {
        throw IoError(IoError::Kind::Parse, path.string() + ": " + e.what());
    }
}

void write_deform_params(const fs::path& path, const std::vector<DeformParams>& gammas) {
    write_json(path, nlohmann::json(gammas));
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
    std::ostringstream out;
    out << std::setprecision(17);
    for (std::size_t c = 0; c < header.size(); ++c) {
        out << (c ? "," : "") << header[c];
    }
    out << '\n';
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            out << (c ? "," : "") << row[c];
        }
        out << '\n';
    }
    write_file_atomic(path, out.str());
}

// ---- checkpoints ----

void save_checkpoint(const NeuralVolume& volume, const fs::path& path) {
    const VolumeSpec& spec = volume.spec();
    const bool f32 = spec.precision == Precision::F32;
    std::string buf(kCheckpointMagic, 4);
    append<std::uint32_t>(buf, kCheckpointVersion);
    append<std::uint32_t>(buf, f32 ? 4u : 8u);
    for (int v : {spec.encoding.levels, spec.encoding.features, spec.encoding.log2_table_size,
                  spec.encoding.min_resolution, spec.encoding.max_resolution, spec.network.hidden_layers,
                  spec.network.hidden_width}) {
        append<std::int32_t>(buf, v);
    }
    const auto params = volume.parameters();
    append<std::uint64_t>(buf, params.size());
    for (double p : params) {
        if (f32) {
            append<float>(buf, static_cast<float>(p));
        } else {
            append<double>(buf, p);
        }
    }
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    append<std::uint32_t>(buf, crc);
    write_file_atomic(path, buf);
}

NeuralVolume load_checkpoint(const fs::path& path) {
    const std::string buf = read_file(path);
    constexpr std::size_t kFixed = 4 + 4 + 4 + 7 * 4 + 8;
    if (buf.size() < kFixed + 4) {
        throw IoError(IoError::Kind::Truncated, path.string() + ": checkpoint too short");
    }
    if (buf.compare(0, 4, std::string(kCheckpointMagic, 4)) != 0) {
        throw IoError(IoError::Kind::BadMagic, path.string() + ": not a checkpoint");
    }
    if (get<std::uint32_t>(buf, 4) != kCheckpointVersion) {
        throw IoError(IoError::Kind::UnsupportedMode, path.string() + ": unknown checkpoint version");
    }
    const std::uint32_t scalar = get<std::uint32_t>(buf, 8);
    if (scalar != 4 && scalar != 8) {
        throw IoError(IoError::Kind::UnsupportedMode, path.string() + ": unknown scalar width");
    }
    VolumeSpec spec;
    spec.encoding.levels = get<std::int32_t>(buf, 12);
    spec.encoding.features = get<std::int32_t>(buf, 16);
    spec.encoding.log2_table_size = get<std::int32_t>(buf, 20);
    spec.encoding.min_resolution = get<std::int32_t>(buf, 24);
    spec.encoding.max_resolution = get<std::int32_t>(buf, 28);
    spec.network.hidden_layers = get<std::int32_t>(buf, 32);
    spec.network.hidden_width = get<std::int32_t>(buf, 36);
    spec.precision = scalar == 4 ? Precision::F32 : Precision::F64;
    const auto count = get<std::uint64_t>(buf, 40);
    const std::size_t payload = static_cast<std::size_t>(count) * scalar;
    if (buf.size() != kFixed + payload + 4) {
        throw IoError(IoError::Kind::Truncated, path.string() + ": checkpoint payload size mismatch");
    }
    const auto stored = get<std::uint32_t>(buf, kFixed + payload);
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(kFixed + payload)));
    if (stored != crc) {
        throw IoError(IoError::Kind::Checksum, path.string() + ": checkpoint checksum mismatch");
    }
    std::vector<double> params(count);
    for (std::size_t k = 0; k < count; ++k) {
        params[k] = scalar == 4 ? static_cast<double>(get<float>(buf, kFixed + 4 * k)) : get<double>(buf, kFixed + 8 * k);
    }
    try {
        spec.validate();
        return NeuralVolume(spec, std::move(params));
    } catch (const Error& e) {
        throw IoError(IoError::Kind::Parse, path.string() + ": " + e.what());
    }
}

// ---- reproducibility ----

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int k = 0; k < len; ++k) {
        out.push_back(hex[digest[k] >> 4]);
        out.push_back(hex[digest[k] & 0xF]);
    }
    return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

void to_json(nlohmann::json& j, const RunManifest& m) {
    j = {{"command", m.command},         {"config", m.config},
         {"protocol", m.protocol},       {"seeds", m.seeds},
         {"versions", m.versions},       {"input_hashes", m.input_hashes},
         {"output_hashes", m.output_hashes}};
}

void from_json(const nlohmann::json& j, RunManifest& m) {
    m.command = j.value("command", std::string());
    m.config = j.value("config", nlohmann::json::object());
    m.protocol = j.value("protocol", nlohmann::json::object());
    m.seeds = j.value("seeds", std::map<std::string, std::uint64_t>());
    m.versions = j.value("versions", std::map<std::string, std::string>());
    m.input_hashes = j.value("input_hashes", std::map<std::string, std::string>());
    m.output_hashes = j.value("output_hashes", std::map<std::string, std::string>());
}

void save_run_manifest(const RunManifest& manifest, const fs::path& path) { write_json(path, manifest); }

RunManifest load_run_manifest(const fs::path& path) {
    try {
        return read_json(path).get<RunManifest>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::Parse, path.string() + ": " + e.what());
    }
}

}  // namespace tiltfield
