#include "h4d/dataio.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>

#include "h4d/objectives.hpp"

namespace h4d {

namespace {

constexpr double kTau = 6.283185307179586;
constexpr double kFps = 30.0;

// SMPL joint indices used by the curve library.
enum Joint : std::size_t {
  kPelvis = 0, kLHip = 1, kRHip = 2, kSpine1 = 3, kLKnee = 4, kRKnee = 5, kSpine2 = 6, kLAnkle = 7,
  kRAnkle = 8, kSpine3 = 9, kNeck = 12, kLShoulder = 16, kRShoulder = 17, kLElbow = 18, kRElbow = 19,
};

struct Curves {
  Tensor poses;
  std::size_t frames;
  void add(std::size_t joint, int axis, const std::function<double(double)>& f) {
    for (std::size_t t = 0; t < frames; ++t) poses.at(t, 3 * joint + axis) += float(f(double(t) / kFps));
  }
};

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

void smpl_family(const std::string& family, Curves& c, std::mt19937_64& rng) {
  const double w = kTau * uniform(rng, 0.8, 1.3), phi = uniform(rng, 0, kTau);
  auto wave = [=](double shift) { return [=](double t) { return std::sin(w * t + phi + shift); }; };
  auto pump = [=](double t) { return 0.5 * (1.0 - std::cos(w * t + phi)); };
  const double drop = uniform(rng, 1.0, 1.3);
  bool arms_down = true;

  if (family == "gait") {
    const double a = uniform(rng, 0.3, 0.6), k = uniform(rng, 0.4, 0.9), s = uniform(rng, 0.2, 0.5);
    c.add(kLHip, 0, [=](double t) { return -a * std::sin(w * t + phi); });
    c.add(kRHip, 0, [=](double t) { return a * std::sin(w * t + phi); });
    c.add(kLKnee, 0, [=](double t) { return k * std::max(0.0, std::sin(w * t + phi + 1.2)); });
    c.add(kRKnee, 0, [=](double t) { return k * std::max(0.0, -std::sin(w * t + phi + 1.2)); });
    c.add(kLShoulder, 0, [=](double t) { return s * std::sin(w * t + phi); });
    c.add(kRShoulder, 0, [=](double t) { return -s * std::sin(w * t + phi); });
    c.add(kPelvis, 1, [=](double t) { return 0.08 * std::sin(w * t + phi); });
  } else if (family == "arm_swing") {
    const double a = uniform(rng, 0.4, 0.9), b = uniform(rng, 0.3, 0.9), lag = uniform(rng, 0, kTau);
    c.add(kLShoulder, 0, wave(0));
    c.add(kLShoulder, 0, [=](double t) { return (a - 1.0) * std::sin(w * t + phi); });
    c.add(kRShoulder, 0, [=](double t) { return a * std::sin(w * t + phi + lag); });
    c.add(kLElbow, 1, [=](double t) { return -b * 0.5 * (1.0 + std::sin(w * t + phi)); });
    c.add(kRElbow, 1, [=](double t) { return b * 0.5 * (1.0 + std::sin(w * t + phi + lag)); });
  } else if (family == "squat") {
    const double d = uniform(rng, 0.4, 1.0), reach = uniform(rng, 0.3, 0.9);
    c.add(kLHip, 0, [=](double t) { return -d * pump(t); });
    c.add(kRHip, 0, [=](double t) { return -d * pump(t); });
    c.add(kLKnee, 0, [=](double t) { return 1.8 * d * pump(t); });
    c.add(kRKnee, 0, [=](double t) { return 1.8 * d * pump(t); });
    c.add(kLAnkle, 0, [=](double t) { return -0.7 * d * pump(t); });
    c.add(kRAnkle, 0, [=](double t) { return -0.7 * d * pump(t); });
    c.add(kSpine3, 0, [=](double t) { return 0.3 * d * pump(t); });
    c.add(kLShoulder, 1, [=](double t) { return -reach * pump(t); });
    c.add(kRShoulder, 1, [=](double t) { return reach * pump(t); });
  } else if (family == "wave") {
    const double a = uniform(rng, 0.3, 0.6);
    arms_down = false;
    c.add(kLShoulder, 2, [=](double) { return -drop; });
    c.add(kRShoulder, 2, [=](double) { return -0.5; });
    c.add(kRElbow, 2, [=](double t) { return -1.0 + a * std::sin(2.0 * w * t + phi); });
    c.add(kNeck, 1, [=](double t) { return -0.2 * std::sin(w * t + phi); });
  } else if (family == "bend") {
    const double d = uniform(rng, 0.2, 0.5), side = uniform(rng, -0.3, 0.3);
    for (std::size_t j : {kSpine1, kSpine2, kSpine3}) {
      c.add(j, 0, [=](double t) { return d * pump(t); });
      c.add(j, 2, [=](double t) { return side * pump(t); });
    }
    c.add(kLShoulder, 0, [=](double t) { return -0.8 * d * pump(t); });
    c.add(kRShoulder, 0, [=](double t) { return -0.8 * d * pump(t); });
  } else if (family == "jumping_jack") {
    const double a = uniform(rng, 1.2, 1.9), h = uniform(rng, 0.2, 0.45);
    c.add(kLShoulder, 2, [=](double t) { return a * pump(t); });
    c.add(kRShoulder, 2, [=](double t) { return -a * pump(t); });
    c.add(kLHip, 2, [=](double t) { return h * pump(t); });
    c.add(kRHip, 2, [=](double t) { return -h * pump(t); });
  } else if (family == "march") {
    const double a = uniform(rng, 0.7, 1.1), e = uniform(rng, 1.0, 1.5);
    c.add(kLHip, 0, [=](double t) { return -a * std::max(0.0, std::sin(w * t + phi)); });
    c.add(kRHip, 0, [=](double t) { return -a * std::max(0.0, -std::sin(w * t + phi)); });
    c.add(kLKnee, 0, [=](double t) { return 1.4 * a * std::max(0.0, std::sin(w * t + phi)); });
    c.add(kRKnee, 0, [=](double t) { return 1.4 * a * std::max(0.0, -std::sin(w * t + phi)); });
    c.add(kLElbow, 1, [=](double) { return -e; });
    c.add(kRElbow, 1, [=](double) { return e; });
    c.add(kLShoulder, 0, [=](double t) { return 0.5 * std::sin(w * t + phi); });
    c.add(kRShoulder, 0, [=](double t) { return -0.5 * std::sin(w * t + phi); });
  } else if (family == "side_step") {
    const double h = uniform(rng, 0.2, 0.4), r = uniform(rng, 0.05, 0.15);
    c.add(kLHip, 2, [=](double t) { return h * std::max(0.0, std::sin(w * t + phi)); });
    c.add(kRHip, 2, [=](double t) { return -h * std::max(0.0, -std::sin(w * t + phi)); });
    c.add(kPelvis, 2, [=](double t) { return r * std::sin(w * t + phi); });
    c.add(kLShoulder, 2, [=](double t) { return 0.3 * std::sin(w * t + phi); });
    c.add(kRShoulder, 2, [=](double t) { return 0.3 * std::sin(w * t + phi); });
  } else {
    throw ConfigError("unknown motion family '" + family + "'");
  }
  if (arms_down) {
    c.add(kLShoulder, 2, [=](double) { return -drop; });
    c.add(kRShoulder, 2, [=](double) { return drop; });
  }
}

// Families on arbitrary trees drive a family-specific subset of joints.
void generic_family(std::size_t family_index, std::size_t families, Curves& c, std::size_t J, std::mt19937_64& rng) {
  const double w = kTau * uniform(rng, 0.8, 1.3);
  for (std::size_t j = 1; j < J; ++j) {
    if (j % families != family_index) continue;
    for (int axis = 0; axis < 3; ++axis) {
      const double a = uniform(rng, 0.2, 0.6), phi = uniform(rng, 0, kTau);
      c.add(j, axis, [=](double t) { return a * std::sin(w * t + phi); });
    }
  }
}

std::vector<std::array<double, 3>> vertex_normals(const Tensor& verts, const std::vector<Face>& faces) {
  std::vector<std::array<double, 3>> n(verts.dim(0), {0, 0, 0});
  for (const Face& f : faces) {
    double p[3][3];
    for (int k = 0; k < 3; ++k)
      for (int c = 0; c < 3; ++c) p[k][c] = verts.at(f[k], c);
    const double u[3] = {p[1][0] - p[0][0], p[1][1] - p[0][1], p[1][2] - p[0][2]};
    const double v[3] = {p[2][0] - p[0][0], p[2][1] - p[0][1], p[2][2] - p[0][2]};
    const double cr[3] = {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    for (int k = 0; k < 3; ++k)
      for (int c = 0; c < 3; ++c) n[f[k]][c] += cr[c];
  }
  for (auto& v : n) {
    const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (len > 0)
      for (double& x : v) x /= len;
  }
  return n;
}

std::string hex(const unsigned char* d, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back(digits[d[i] >> 4]);
    s.push_back(digits[d[i] & 15]);
  }
  return s;
}

}  // namespace

const std::vector<std::string>& train_families() {
  static const std::vector<std::string> f = {"gait", "arm_swing", "squat", "wave", "bend", "jumping_jack"};
  return f;
}

const std::vector<std::string>& test_families() {
  static const std::vector<std::string> f = {"march", "side_step"};
  return f;
}

Tensor decode_meshes(const BodyModel& model, const Tensor& beta, const Tensor& poses,
                     const std::optional<Tensor>& offsets) {
  const std::size_t J = model.num_joints(), V = model.num_vertices();
  if (poses.rank() != 2 || poses.dim(1) != 3 * J) throw DimensionError("decode_meshes: poses must be [L,3J]");
  const std::size_t L = poses.dim(0);
  Tensor out(Shape{L * V, 3});
  for (std::size_t t = 0; t < L; ++t) {
    Pose pose{Tensor(Shape{J, 3}), {}};
    std::copy_n(poses.data() + t * 3 * J, 3 * J, pose.theta.data());
    const Tensor frame = skin_lbs(model, beta, pose, offsets);
    std::copy_n(frame.data(), 3 * V, out.data() + t * 3 * V);
  }
  return out;
}

Tensor family_motion(const std::string& family, std::size_t J, std::size_t frames, std::mt19937_64& rng,
                     float max_angle) {
  if (frames == 0) throw ConfigError("family_motion: frames must be positive");
  Curves c{Tensor(Shape{frames, 3 * J}), frames};
  const double yaw = uniform(rng, -0.5, 0.5);
  c.add(0, 1, [=](double) { return yaw; });
  if (J == 24) {
    smpl_family(family, c, rng);
  } else {
    std::vector<std::string> all = train_families();
    all.insert(all.end(), test_families().begin(), test_families().end());
    const auto it = std::find(all.begin(), all.end(), family);
    if (it == all.end()) throw ConfigError("unknown motion family '" + family + "'");
    generic_family(std::size_t(it - all.begin()), all.size(), c, J, rng);
  }
  // Low-amplitude drift on every joint so no rotation channel is silent.
  for (std::size_t j = 0; j < J; ++j)
    for (int axis = 0; axis < 3; ++axis) {
      const double a = uniform(rng, 0.0, 0.05), w = kTau * uniform(rng, 0.1, 1.0), phi = uniform(rng, 0, kTau);
      c.add(j, axis, [=](double t) { return a * std::sin(w * t + phi); });
    }
  for (float& v : c.poses.values()) v = std::clamp(v, -max_angle, max_angle);
  return c.poses;
}

SyntheticSequence make_sequence(const BodyModel& model, const std::string& family, const SynthesisOptions& opt,
                                std::mt19937_64& rng) {
  SyntheticSequence s;
  s.family = family;
  s.poses = family_motion(family, model.num_joints(), opt.frames, rng, opt.max_angle);
  s.beta = Tensor(Shape{model.shape_dims()});
  std::normal_distribution<double> n01(0.0, 1.0);
  for (float& b : s.beta.values()) b = float(std::clamp(n01(rng), -2.5, 2.5) * opt.beta_scale);

  const std::size_t V = model.num_vertices();
  const auto normals = vertex_normals(model.template_vertices, model.faces);
  s.offsets = Tensor(Shape{V, 3});
  std::uniform_int_distribution<std::size_t> pick(0, V - 1);
  for (int bump = 0; bump < 4; ++bump) {
    const std::size_t center = pick(rng);
    const double sigma = uniform(rng, 0.1, 0.25), amp = uniform(rng, 0.3, 1.0) * opt.offset_scale;
    for (std::size_t v = 0; v < V; ++v) {
      double d2 = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = double(model.template_vertices.at(v, c)) - model.template_vertices.at(center, c);
        d2 += d * d;
      }
      const double g = amp * std::exp(-d2 / (2 * sigma * sigma));
      for (int c = 0; c < 3; ++c) s.offsets.at(v, c) += float(g * normals[v][c]);
    }
  }
  s.body = decode_meshes(model, s.beta, s.poses);
  s.clothed = decode_meshes(model, s.beta, s.poses, s.offsets);
  return s;
}

std::vector<SyntheticSequence> gen_synthetic_dataset(const BodyModel& model, std::size_t n_seqs, std::uint64_t seed,
                                                     Split split, const SynthesisOptions& opt) {
  if (n_seqs == 0) throw ConfigError("gen_synthetic_dataset: n_seqs must be positive");
  const auto& families = split == Split::train ? train_families() : test_families();
  std::mt19937_64 rng(seed ^ (split == Split::train ? 0x7261696eULL : 0x74657374ULL));
  std::vector<SyntheticSequence> out;
  for (std::size_t i = 0; i < n_seqs; ++i) out.push_back(make_sequence(model, families[i % families.size()], opt, rng));
  return out;
}

std::vector<Tensor> slice_subsequences(const Tensor& seq, std::size_t length, std::size_t stride) {
  if (seq.rank() != 2) throw DimensionError("slice_subsequences: expected [T,D]");
  if (length == 0 || stride == 0) throw ConfigError("slice_subsequences: length and stride must be positive");
  const std::size_t T = seq.dim(0), D = seq.dim(1);
  if (T < length) {
    throw ConfigError("slice_subsequences: sequence of " + std::to_string(T) + " frames is shorter than " +
                      std::to_string(length));
  }
  std::vector<Tensor> out;
  for (std::size_t s = 0; s + length <= T; s += stride) {
    Tensor w(Shape{length, D});
    std::copy_n(seq.data() + s * D, length * D, w.data());
    out.push_back(std::move(w));
  }
  return out;
}

Tensor frame_rows(const Tensor& stacked, std::size_t frames, std::size_t frame) {
  if (frames == 0 || stacked.rank() != 2 || stacked.dim(0) % frames != 0 || frame >= frames) {
    throw DimensionError("frame_rows: bad frame split of " + shape_string(stacked.shape()));
  }
  const std::size_t n = stacked.dim(0) / frames, c = stacked.dim(1);
  Tensor out(Shape{n, c});
  std::copy_n(stacked.data() + frame * n * c, n * c, out.data());
  return out;
}

Tensor sample_sequence_points(const Tensor& meshes, const std::vector<Face>& faces, std::size_t frames,
                              std::size_t per_frame, std::uint64_t seed) {
  Tensor out(Shape{frames * per_frame, 3});
  std::mt19937_64 seeds(seed);
  for (std::size_t t = 0; t < frames; ++t) {
    const SurfaceSamples s = sample_surface(frame_rows(meshes, frames, t), faces, per_frame, seeds());
    std::copy_n(s.points.data(), 3 * per_frame, out.data() + 3 * t * per_frame);
  }
  return out;
}

void store_sequence(const SyntheticSequence& seq, TensorArchive& ar) {
  std::vector<std::string> all = train_families();
  all.insert(all.end(), test_families().begin(), test_families().end());
  const auto it = std::find(all.begin(), all.end(), seq.family);
  ar.put("family", Tensor::scalar(it == all.end() ? -1.0f : float(it - all.begin())));
  ar.put("beta", seq.beta);
  ar.put("poses", seq.poses);
  ar.put("offsets", seq.offsets);
  ar.put("body", seq.body);
  ar.put("clothed", seq.clothed);
}

SyntheticSequence load_sequence(const TensorArchive& ar) {
  std::vector<std::string> all = train_families();
  all.insert(all.end(), test_families().begin(), test_families().end());
  SyntheticSequence s;
  const float f = ar.scalar("family");
  s.family = f >= 0 && std::size_t(f) < all.size() ? all[std::size_t(f)] : "unknown";
  s.beta = ar.get("beta");
  s.poses = ar.get("poses");
  s.offsets = ar.get("offsets");
  s.body = ar.get("body");
  s.clothed = ar.get("clothed");
  if (s.poses.rank() != 2) throw DimensionError("sequence poses must be [L,3J]");
  return s;
}

void write_dataset(const std::filesystem::path& dir, const BodyModel& model,
                   const std::vector<SyntheticSequence>& train, const std::vector<SyntheticSequence>& test) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "test");
  TensorArchive m;
  store_body_model(model, m);
  write_archive(dir / "model.hta", m);
  std::ostringstream manifest;
  manifest << "model=model.hta\n";
  char name[32];
  for (const auto& [split, seqs] : {std::pair{"train", &train}, std::pair{"test", &test}}) {
    for (std::size_t i = 0; i < seqs->size(); ++i) {
      std::snprintf(name, sizeof name, "seq_%04zu.hta", i);
      TensorArchive ar;
      store_sequence((*seqs)[i], ar);
      write_archive(dir / split / name, ar);
      manifest << split << '.' << i << '=' << split << '/' << name << '\n';
    }
  }
  std::ofstream out(dir / "manifest.txt");
  out << manifest.str();
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
}

std::vector<std::pair<std::string, std::string>> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ParseError("manifest line " + std::to_string(n) + " is not name=path", std::size_t(in.tellg()));
    }
    out.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return out;
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset d;
  bool have_model = false;
  for (const auto& [name, rel] : read_manifest(dir / "manifest.txt")) {
    if (name == "model") {
      d.model = load_body_model(read_archive(dir / rel));
      have_model = true;
    } else if (name.rfind("train.", 0) == 0) {
      d.train.push_back(load_sequence(read_archive(dir / rel)));
    } else if (name.rfind("test.", 0) == 0) {
      d.test.push_back(load_sequence(read_archive(dir / rel)));
    }
  }
  if (!have_model) throw ConfigError("dataset manifest has no model entry");
  return d;
}

std::vector<std::filesystem::path> export_obj_sequence(const Tensor& meshes, std::size_t frames,
                                                       const std::vector<Face>& faces,
                                                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  char name[32];
  for (std::size_t t = 0; t < frames; ++t) {
    const Tensor v = frame_rows(meshes, frames, t);
    for (const Face& f : faces)
      for (auto i : f)
        if (i >= v.dim(0)) throw DimensionError("export_obj_sequence: face index out of range");
    std::snprintf(name, sizeof name, "frame_%04zu.obj", t);
    paths.push_back(dir / name);
    std::ofstream out(paths.back());
    char line[96];
    for (std::size_t i = 0; i < v.dim(0); ++i) {
      std::snprintf(line, sizeof line, "v %.6f %.6f %.6f\n", v.at(i, 0), v.at(i, 1), v.at(i, 2));
      out << line;
    }
    for (const Face& f : faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    if (!out) throw std::runtime_error("cannot write " + paths.back().string());
  }
  return paths;
}

std::string content_hash(std::span<const std::uint8_t> bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  return hex(digest, len);
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string file_hash(const std::filesystem::path& path) { return content_hash(read_bytes(path)); }

}  // namespace h4d
