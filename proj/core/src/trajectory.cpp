#include "tfex/trajectory.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tfex {

namespace {

constexpr char kMagic[4] = {'T', 'F', 'E', 'X'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_f64(std::ofstream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
double read_f64(std::ifstream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

std::ifstream open_checked(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error(path + ": bad magic, not a TFEX file");
    const std::uint32_t version = read_u32(in);
    if (version != kVersion)
        throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
    return in;
}

void write_header(std::ofstream& out, std::uint32_t M, std::uint32_t N) {
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, M);
    write_u32(out, N);
}

}  // namespace

bool TrajectoryBatch::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

void save_batch(const TrajectoryBatch& batch, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_header(out, static_cast<std::uint32_t>(batch.M), static_cast<std::uint32_t>(batch.N));
    write_u32(out, static_cast<std::uint32_t>(batch.d));
    write_f64(out, batch.h);
    out.write(reinterpret_cast<const char*>(batch.data.data()),
              static_cast<std::streamsize>(batch.data.size() * sizeof(double)));
    if (!out) throw std::runtime_error("short write to " + path);
}

TrajectoryBatch load_batch(const std::string& path) {
    std::ifstream in = open_checked(path);
    TrajectoryBatch batch;
    batch.M = read_u32(in);
    batch.N = read_u32(in);
    batch.d = read_u32(in);
    batch.h = read_f64(in);
    batch.data.resize(batch.M * (batch.N + 1) * batch.d);
    in.read(reinterpret_cast<char*>(batch.data.data()),
            static_cast<std::streamsize>(batch.data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated batch file " + path);
    return batch;
}

void save_rows(const std::vector<double>& rows, std::size_t d, double h, const std::string& path) {
    if (d == 0 || rows.size() % d != 0)
        throw std::invalid_argument("save_rows: size not a multiple of d");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_header(out, 1, static_cast<std::uint32_t>(rows.size() / d));
    write_u32(out, static_cast<std::uint32_t>(d));
    write_f64(out, h);
    out.write(reinterpret_cast<const char*>(rows.data()),
              static_cast<std::streamsize>(rows.size() * sizeof(double)));
    if (!out) throw std::runtime_error("short write to " + path);
}

std::vector<double> load_rows(const std::string& path, std::size_t& d_out, double& h_out) {
    std::ifstream in = open_checked(path);
    read_u32(in);  // M, always 1 for row files
    const std::uint32_t rows = read_u32(in);
    d_out = read_u32(in);
    h_out = read_f64(in);
    std::vector<double> out(static_cast<std::size_t>(rows) * d_out);
    in.read(reinterpret_cast<char*>(out.data()),
            static_cast<std::streamsize>(out.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated row file " + path);
    return out;
}

void export_csv(const TrajectoryBatch& batch, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write " + path);
    std::fprintf(f, "traj,step,t");
    for (std::size_t i = 0; i < batch.d; ++i) std::fprintf(f, ",u%zu", i + 1);
    std::fprintf(f, "\n");
    for (std::size_t m = 0; m < batch.M; ++m) {
        for (std::size_t n = 0; n <= batch.N; ++n) {
            std::fprintf(f, "%zu,%zu,%.17g", m, n, batch.time(n));
            const double* u = batch.state(m, n);
            for (std::size_t i = 0; i < batch.d; ++i) std::fprintf(f, ",%.17g", u[i]);
            std::fprintf(f, "\n");
        }
    }
    std::fclose(f);
}

}  // namespace tfex
