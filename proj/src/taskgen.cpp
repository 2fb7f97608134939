#include "reldist/taskgen.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>

#include <json.hpp>
#include <zlib.h>

#include "reldist/error.hpp"

namespace reldist {

namespace {

constexpr double kPi = std::numbers::pi;

struct Rng {
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
  std::mt19937_64 gen;
};

// Point on the side of a cylinder of radius r from base along unit axis dir.
Vec3 stub_point(Rng& rng, const Vec3& base, Vec3 dir, double r, double len) {
  dir.normalize();
  Vec3 u = dir.cross(Vec3::UnitZ());
  if (u.norm() < 1e-6) u = Vec3::UnitX();
  u.normalize();
  const Vec3 v = dir.cross(u);
  const double s = rng.uniform(0.0, len);
  const double a = rng.uniform(0.0, 2.0 * kPi);
  return base + s * dir + r * (std::cos(a) * u + std::sin(a) * v);
}

PointCloud to_cloud(const std::vector<Vec3>& pts) {
  PointCloud out(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return out;
}

struct Patch {
  double area;
  std::function<Vec3(Rng&)> sample;
};

std::vector<Vec3> sample_patches(Rng& rng, const std::vector<Patch>& patches, int n) {
  double total = 0.0;
  for (const Patch& p : patches) total += p.area;
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(n));
  while (static_cast<int>(pts.size()) < n) {
    double u = rng.uniform(0.0, total);
    for (const Patch& p : patches) {
      if (u < p.area || &p == &patches.back()) {
        pts.push_back(p.sample(rng));
        break;
      }
      u -= p.area;
    }
  }
  return pts;
}

// Axis-aligned rectangle in the plane normal to `axis` (0, 1, 2), centered at c.
Patch rect(int axis, const Vec3& c, double su, double sv) {
  return {su * sv, [=](Rng& rng) {
            Vec3 p = c;
            const int a = (axis + 1) % 3;
            const int b = (axis + 2) % 3;
            p[a] += rng.uniform(-su / 2, su / 2);
            p[b] += rng.uniform(-sv / 2, sv / 2);
            return p;
          }};
}

void normalize_scene(PointCloud& a, PointCloud& b) {
  const double d = diameter(a, b);
  a /= d;
  b /= d;
}

}  // namespace

double diameter(const PointCloud& a, const PointCloud& b) {
  PointCloud all(a.rows() + b.rows(), 3);
  all << a, b;
  double best = 0.0;
  for (Eigen::Index i = 0; i < all.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < all.rows(); ++j) best = std::max(best, (all.row(i) - all.row(j)).squaredNorm());
  }
  return std::sqrt(best);
}

GoalPair gen_ring_on_peg(std::uint64_t seed, int n, double variation) {
  if (n < 64) throw Error(ErrorCode::InvalidArgument, "ring_on_peg needs at least 64 points");
  Rng rng(seed);
  const auto jitter = [&]() { return 1.0 + rng.uniform(-variation, variation); };
  const double big_r = 1.0 * jitter();
  const double small_r = 0.15 * jitter();
  const double tab1 = 0.8 * jitter();
  const double tab2 = 0.4 * jitter();

  // Ring: torus with a 3x denser 20 degree arc and two cylindrical tabs.
  const double dens = 3.0;
  const double notch_center = -60.0 * kPi / 180.0;
  const double notch_half = 10.0 * kPi / 180.0;
  const double el = 35.0 * kPi / 180.0;
  const double az2 = 110.0 * kPi / 180.0;
  const Vec3 d1(std::cos(el), 0.0, std::sin(el));
  const Vec3 d2(std::cos(az2), std::sin(az2), 0.0);
  const Vec3 base1(big_r + 0.5 * small_r, 0.0, 0.0);
  const Vec3 base2 = (big_r + 0.5 * small_r) * Vec3(std::cos(az2), std::sin(az2), 0.0);
  const double a_torus = 4.0 * kPi * kPi * big_r * small_r / dens;
  const double a1 = 2.0 * kPi * small_r * tab1;
  const double a2 = 2.0 * kPi * small_r * tab2;
  const double total = a_torus + a1 + a2;
  std::vector<Vec3> ring;
  while (static_cast<int>(ring.size()) < n) {
    const double u = rng.uniform() * total;
    if (u < a1) {
      ring.push_back(stub_point(rng, base1, d1, 0.8 * small_r, tab1));
      continue;
    }
    if (u < a1 + a2) {
      ring.push_back(stub_point(rng, base2, d2, 0.8 * small_r, tab2));
      continue;
    }
    const double th = rng.uniform(0.0, 2.0 * kPi);
    const double ph = rng.uniform(0.0, 2.0 * kPi);
    if (rng.uniform() > (big_r + small_r * std::cos(ph)) / (big_r + small_r)) continue;
    const double thc = std::fmod(th + kPi, 2.0 * kPi) - kPi;
    if (!(std::abs(thc - notch_center) < notch_half) && rng.uniform() > 1.0 / dens) continue;
    const double rr = big_r + small_r * std::cos(ph);
    ring.emplace_back(rr * std::cos(th), rr * std::sin(th), small_r * std::sin(ph) + 1.0);
  }

  // Peg: lateral cylinder surface plus an off-center rectangular base plate.
  const double peg_r = 0.5 * big_r;
  const double peg_h = 2.0;
  const double plate_w = 3.2 * jitter();
  const double plate_d = 1.0 * jitter();
  const Vec3 plate_c(1.4 * jitter(), 0.2 * jitter(), 0.0);
  std::vector<Patch> peg_parts;
  peg_parts.push_back({2.0 * kPi * peg_r * peg_h, [=](Rng& r) {
                         const double t = r.uniform(0.0, 2.0 * kPi);
                         return Vec3(peg_r * std::cos(t), peg_r * std::sin(t), r.uniform(0.0, peg_h));
                       }});
  peg_parts.push_back(rect(2, plate_c, plate_w, plate_d));
  std::vector<Vec3> peg = sample_patches(rng, peg_parts, n);

  GoalPair g{to_cloud(ring), to_cloud(peg)};
  normalize_scene(g.pa, g.pb);
  return g;
}

GoalPair gen_lid_on_box(std::uint64_t seed, int n, double variation) {
  if (n < 64) throw Error(ErrorCode::InvalidArgument, "lid_on_box needs at least 64 points");
  Rng rng(seed);
  const auto jitter = [&]() { return 1.0 + rng.uniform(-variation, variation); };
  const double w = 1.2 * jitter();
  const double dpt = 0.8 * jitter();
  const double h = 0.5 * jitter();
  const double div_x = -w / 2 + 0.3 * w * jitter();
  const double div_h = 0.6 * h;
  const double lip = 0.1 * jitter();
  const double inset = 0.03;
  const double tab = 0.18 * jitter();

  std::vector<Patch> box;
  box.push_back(rect(2, Vec3(0, 0, 0), w, dpt));
  box.push_back(rect(0, Vec3(-w / 2, 0, h / 2), dpt, h));
  box.push_back(rect(0, Vec3(w / 2, 0, h / 2), dpt, h));
  box.push_back(rect(1, Vec3(0, -dpt / 2, h / 2), h, w));
  box.push_back(rect(1, Vec3(0, dpt / 2, h / 2), h, w));
  box.push_back(rect(0, Vec3(div_x, 0, div_h / 2), dpt, div_h));

  const double top = h + 0.02;
  const double iw = w - 2 * inset;
  const double id = dpt - 2 * inset;
  std::vector<Patch> lid;
  lid.push_back(rect(2, Vec3(0, 0, top), w, dpt));
  lid.push_back(rect(0, Vec3(-iw / 2, 0, top - lip / 2), id, lip));
  lid.push_back(rect(0, Vec3(iw / 2, 0, top - lip / 2), id, lip));
  lid.push_back(rect(1, Vec3(0, -id / 2, top - lip / 2), lip, iw));
  lid.push_back(rect(1, Vec3(0, id / 2, top - lip / 2), lip, iw));
  // Corner tab: a small block standing on the lid.
  const Vec3 tc(w / 2 - tab / 2 - 0.02, dpt / 2 - tab / 2 - 0.02, top);
  lid.push_back(rect(2, tc + Vec3(0, 0, tab), tab, tab));
  lid.push_back(rect(0, tc + Vec3(tab / 2, 0, tab / 2), tab, tab));
  lid.push_back(rect(0, tc + Vec3(-tab / 2, 0, tab / 2), tab, tab));
  lid.push_back(rect(1, tc + Vec3(0, tab / 2, tab / 2), tab, tab));
  lid.push_back(rect(1, tc + Vec3(0, -tab / 2, tab / 2), tab, tab));

  GoalPair g{to_cloud(sample_patches(rng, lid, n)), to_cloud(sample_patches(rng, box, n))};
  normalize_scene(g.pa, g.pb);
  return g;
}

const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names{"ring_on_peg", "lid_on_box"};
  return names;
}

GoalPair generate(const std::string& family, std::uint64_t seed, int n_points, double variation) {
  if (family == "ring_on_peg") return gen_ring_on_peg(seed, n_points, variation);
  if (family == "lid_on_box") return gen_lid_on_box(seed, n_points, variation);
  throw Error(ErrorCode::InvalidArgument, "unknown family '" + family + "' (valid: ring_on_peg, lid_on_box)");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ stream) ^ index);
}

TaskInstance perturb(const GoalPair& goal, std::uint64_t seed, double max_translation, PoseMode mode,
                     const std::string& family) {
  if (max_translation < 0.0) throw Error(ErrorCode::InvalidArgument, "max_translation must be >= 0");
  auto draw = [&](std::uint64_t stream) {
    RigidTransform t = random_transform(derive_seed(seed, stream), max_translation);
    if (mode == PoseMode::Fixed) {
      t.rotation = Mat3::Identity();
    } else if (mode == PoseMode::Upright) {
      std::mt19937_64 rng(derive_seed(seed, stream + 100));
      t.rotation = rot_z(std::uniform_real_distribution<double>(-180.0, 180.0)(rng));
    }
    return t;
  };
  TaskInstance inst;
  inst.pa_goal = goal.pa;
  inst.pb_goal = goal.pb;
  inst.t_alpha = draw(1);
  inst.t_beta = draw(2);
  inst.t_cross_gt = compose(inst.t_beta, inverse(inst.t_alpha));
  inst.pa_init = apply(inst.t_alpha, goal.pa);
  inst.pb_init = apply(inst.t_beta, goal.pb);
  inst.family = family;
  inst.seed = seed;
  return inst;
}

// ---------------------------------------------------------------- dataset I/O

namespace {

constexpr char kCloudMagic[4] = {'R', 'P', 'C', 'L'};
constexpr std::uint32_t kCloudVersion = 1;
constexpr int kSchemaVersion = 1;

std::string cloud_bytes(const PointCloud& p) {
  std::string out;
  const std::uint64_t n = static_cast<std::uint64_t>(p.rows());
  out.append(kCloudMagic, 4);
  out.append(reinterpret_cast<const char*>(&kCloudVersion), 4);
  out.append(reinterpret_cast<const char*>(&n), 8);
  out.append(reinterpret_cast<const char*>(p.data()), static_cast<std::size_t>(p.size()) * sizeof(double));
  return out;
}

std::uint32_t crc_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string read_all(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot open " + file.string());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

PointCloud parse_cloud(const std::string& bytes, const std::string& what) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCloudMagic, 4) != 0) {
    throw Error(ErrorCode::Io, what + " is not a point cloud blob");
  }
  std::uint32_t version = 0;
  std::uint64_t n = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&n, bytes.data() + 8, 8);
  if (version != kCloudVersion) throw Error(ErrorCode::VersionMismatch, what + " has blob version " + std::to_string(version));
  if (bytes.size() != 16 + n * 3 * sizeof(double)) throw Error(ErrorCode::Io, what + " has the wrong size");
  PointCloud p(static_cast<Eigen::Index>(n), 3);
  std::memcpy(p.data(), bytes.data() + 16, n * 3 * sizeof(double));
  return p;
}

nlohmann::json transform_json(const RigidTransform& t) {
  nlohmann::json r = nlohmann::json::array();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r.push_back(t.rotation(i, j));
  }
  return {{"rotation", r}, {"translation", {t.translation[0], t.translation[1], t.translation[2]}}};
}

RigidTransform transform_from(const nlohmann::json& j) {
  RigidTransform t;
  const auto& r = j.at("rotation");
  if (r.size() != 9 || j.at("translation").size() != 3) throw Error(ErrorCode::Io, "malformed transform");
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) t.rotation(i, k) = r.at(static_cast<std::size_t>(3 * i + k)).get<double>();
    t.translation[i] = j.at("translation").at(static_cast<std::size_t>(i)).get<double>();
  }
  return t;
}

void write_bytes(const std::filesystem::path& file, const std::string& bytes) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error(ErrorCode::Io, "write failed for " + file.string());
}

}  // namespace

void write_cloud(const PointCloud& p, const std::filesystem::path& file) { write_bytes(file, cloud_bytes(p)); }

PointCloud read_cloud(const std::filesystem::path& file) { return parse_cloud(read_all(file), file.string()); }

Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.demos < 0 || spec.evals < 0) throw Error(ErrorCode::InvalidArgument, "counts must be >= 0");
  if (spec.eval_on_demo_geometry && spec.evals > 0 && spec.demos == 0) {
    throw Error(ErrorCode::InvalidArgument, "demo geometry for held-out instances needs at least one demo");
  }
  Dataset data;
  data.family = spec.family;
  data.seed = spec.seed;
  data.n_points = spec.n_points;
  data.variation = spec.variation;
  data.max_translation = spec.max_translation;
  std::vector<GoalPair> demo_geom;
  for (int i = 0; i < spec.demos; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    demo_geom.push_back(generate(spec.family, derive_seed(spec.seed, 1, ui), spec.n_points, spec.variation));
    data.demos.push_back(
        perturb(demo_geom.back(), derive_seed(spec.seed, 2, ui), spec.max_translation, PoseMode::Random, spec.family));
  }
  for (int i = 0; i < spec.evals; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    const GoalPair g = spec.eval_on_demo_geometry
                           ? demo_geom[static_cast<std::size_t>(i) % demo_geom.size()]
                           : generate(spec.family, derive_seed(spec.seed, 3, ui), spec.n_points, spec.variation);
    data.evals.push_back(perturb(g, derive_seed(spec.seed, 4, ui), spec.max_translation, spec.eval_poses, spec.family));
  }
  return data;
}

void dataset_write(const Dataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json manifest;
  manifest["schema_version"] = kSchemaVersion;
  manifest["family"] = data.family;
  manifest["seed"] = data.seed;
  manifest["n_points"] = data.n_points;
  manifest["variation"] = data.variation;
  manifest["max_translation"] = data.max_translation;
  manifest["counts"] = {{"demos", data.demos.size()}, {"evals", data.evals.size()}};
  nlohmann::json items = nlohmann::json::array();
  auto emit = [&](const std::vector<TaskInstance>& list, const std::string& split) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      const TaskInstance& t = list[i];
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%04zu", split.c_str(), i);
      nlohmann::json item;
      item["id"] = id;
      item["split"] = split;
      item["family"] = t.family;
      item["seed"] = t.seed;
      item["t_alpha"] = transform_json(t.t_alpha);
      item["t_beta"] = transform_json(t.t_beta);
      item["t_cross_gt"] = transform_json(t.t_cross_gt);
      const std::pair<const char*, const PointCloud*> clouds[] = {
          {"pa_goal", &t.pa_goal}, {"pb_goal", &t.pb_goal}, {"pa_init", &t.pa_init}, {"pb_init", &t.pb_init}};
      for (const auto& [name, cloud] : clouds) {
        const std::string file = std::string(id) + "_" + name + ".rpcl";
        const std::string bytes = cloud_bytes(*cloud);
        write_bytes(dir / file, bytes);
        item["clouds"][name] = {{"file", file}, {"crc32", crc_of(bytes)}, {"points", cloud->rows()}};
      }
      items.push_back(item);
    }
  };
  emit(data.demos, "demo");
  emit(data.evals, "eval");
  manifest["instances"] = items;
  write_bytes(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset dataset_read(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_all(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("manifest.json: ") + e.what());
  }
  try {
    const int version = manifest.at("schema_version").get<int>();
    if (version != kSchemaVersion) {
      throw Error(ErrorCode::VersionMismatch, "dataset schema version " + std::to_string(version));
    }
    Dataset data;
    data.family = manifest.at("family").get<std::string>();
    data.seed = manifest.at("seed").get<std::uint64_t>();
    data.n_points = manifest.at("n_points").get<int>();
    data.variation = manifest.at("variation").get<double>();
    data.max_translation = manifest.at("max_translation").get<double>();
    for (const auto& item : manifest.at("instances")) {
      TaskInstance t;
      t.family = item.at("family").get<std::string>();
      t.seed = item.at("seed").get<std::uint64_t>();
      t.t_alpha = transform_from(item.at("t_alpha"));
      t.t_beta = transform_from(item.at("t_beta"));
      t.t_cross_gt = transform_from(item.at("t_cross_gt"));
      const std::pair<const char*, PointCloud*> clouds[] = {
          {"pa_goal", &t.pa_goal}, {"pb_goal", &t.pb_goal}, {"pa_init", &t.pa_init}, {"pb_init", &t.pb_init}};
      for (const auto& [name, cloud] : clouds) {
        const auto& meta = item.at("clouds").at(name);
        const std::string file = meta.at("file").get<std::string>();
        const std::string bytes = read_all(dir / file);
        if (crc_of(bytes) != meta.at("crc32").get<std::uint32_t>()) {
          throw Error(ErrorCode::ChecksumMismatch, "checksum mismatch in " + file);
        }
        *cloud = parse_cloud(bytes, file);
      }
      const std::string split = item.at("split").get<std::string>();
      (split == "demo" ? data.demos : data.evals).push_back(std::move(t));
    }
    if (data.demos.size() != manifest.at("counts").at("demos").get<std::size_t>() ||
        data.evals.size() != manifest.at("counts").at("evals").get<std::size_t>()) {
      throw Error(ErrorCode::Io, "instance counts disagree with manifest");
    }
    return data;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("malformed manifest: ") + e.what());
  }
}

}  // namespace reldist
