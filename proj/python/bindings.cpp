#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "dalign/alignment.hpp"
#include "dalign/checkpoint.hpp"
#include "dalign/dataset.hpp"
#include "dalign/errors.hpp"
#include "dalign/geometry.hpp"
#include "dalign/gradient_suite.hpp"
#include "dalign/harness.hpp"
#include "dalign/synthetic.hpp"

namespace py = pybind11;
using namespace dalign;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;

std::vector<ClassDistribution> distributions(const F64& a, const char* what) {
  if (a.ndim() != 2 || a.shape(1) != static_cast<py::ssize_t>(kNumClasses)) {
    throw DimensionError(std::string(what) + " must have shape (T, 8)");
  }
  std::vector<ClassDistribution> out(static_cast<std::size_t>(a.shape(0)));
  auto r = a.unchecked<2>();
  for (std::size_t t = 0; t < out.size(); ++t) {
    for (std::size_t c = 0; c < kNumClasses; ++c) out[t].probs[c] = r(static_cast<py::ssize_t>(t), static_cast<py::ssize_t>(c));
  }
  return out;
}

py::array_t<double> to_array(const std::vector<ClassDistribution>& ds) {
  py::array_t<double> out({static_cast<py::ssize_t>(ds.size()), static_cast<py::ssize_t>(kNumClasses)});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t t = 0; t < ds.size(); ++t) {
    for (std::size_t c = 0; c < kNumClasses; ++c) w(static_cast<py::ssize_t>(t), static_cast<py::ssize_t>(c)) = ds[t].probs[c];
  }
  return out;
}

PointCloud make_cloud(const F64& points, const std::optional<F32>& colors) {
  if (points.ndim() != 2 || points.shape(1) != 3) throw DimensionError("points must have shape (N, 3)");
  PointCloud cloud;
  auto p = points.unchecked<2>();
  for (py::ssize_t i = 0; i < points.shape(0); ++i) cloud.points.push_back({p(i, 0), p(i, 1), p(i, 2)});
  cloud.colors.assign(cloud.points.size(), {0.0f, 0.0f, 0.0f});
  if (colors) {
    if (colors->ndim() != 2 || colors->shape(0) != points.shape(0) || colors->shape(1) != 3) {
      throw DimensionError("colors must have shape (N, 3)");
    }
    auto c = colors->unchecked<2>();
    for (py::ssize_t i = 0; i < points.shape(0); ++i) cloud.colors[static_cast<std::size_t>(i)] = {c(i, 0), c(i, 1), c(i, 2)};
  }
  return cloud;
}

BoundingBox make_box(const std::array<double, 6>& b) {
  BoundingBox box{{b[0], b[1], b[2]}, {b[3], b[4], b[5]}};
  box.validate();
  return box;
}

py::dict episode_dict(const EpisodeSequence& ep) {
  const std::size_t t = ep.frames.size();
  const auto h = static_cast<py::ssize_t>(ep.manifest.intrinsics.height);
  const auto w = static_cast<py::ssize_t>(ep.manifest.intrinsics.width);
  py::array_t<std::uint8_t> rgb({static_cast<py::ssize_t>(t), h, w, py::ssize_t{3}});
  py::array_t<float> depth({static_cast<py::ssize_t>(ep.depths.size()), h, w});
  for (std::size_t i = 0; i < t; ++i) {
    std::memcpy(rgb.mutable_data(static_cast<py::ssize_t>(i)), ep.frames[i].pixels.data(), ep.frames[i].pixels.size());
  }
  for (std::size_t i = 0; i < ep.depths.size(); ++i) {
    std::memcpy(depth.mutable_data(static_cast<py::ssize_t>(i)), ep.depths[i].values.data(),
                ep.depths[i].values.size() * sizeof(float));
  }
  py::dict d;
  d["episode_id"] = ep.manifest.episode_id;
  d["user_id"] = ep.manifest.user_id;
  d["scene_id"] = ep.manifest.scene_id;
  d["intrinsics"] = ep.manifest.intrinsics;
  d["rgb"] = rgb;
  d["depth"] = depth;
  d["labels"] = ep.labels;
  return d;
}

py::dict curve_dict(const TrainResult& r) {
  py::list curve;
  for (const auto& e : r.curve) {
    py::dict row;
    row["epoch"] = e.epoch;
    row["train_loss"] = e.train_loss;
    row["val_loss"] = e.val_loss;
    row["val_accuracy"] = e.val_accuracy;
    row["val_mean_class_accuracy"] = e.val_mean_class_accuracy;
    curve.append(row);
  }
  py::dict d;
  d["curve"] = curve;
  d["best_epoch"] = r.best_epoch;
  d["best_val_accuracy"] = r.best_val_accuracy;
  d["class_weights"] = r.class_weights;
  return d;
}

Branch branch_of(const std::string& name) {
  if (name == "human") return Branch::Human;
  if (name == "robot") return Branch::Robot;
  throw ParameterError("branch must be human or robot, got '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Frame-level action classification and cross-embodiment alignment";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<IndexError>(m, "IndexError", base.ptr());
  py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
  py::register_exception<CapacityError>(m, "CapacityError", base.ptr());
  py::register_exception<IntegrityError>(m, "IntegrityError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<MissingClassError>(m, "MissingClassError", base.ptr());

  m.attr("CLASS_NAMES") = std::vector<std::string>(kClassNames.begin(), kClassNames.end());

  py::class_<CameraIntrinsics>(m, "CameraIntrinsics")
      .def(py::init([](double fx, double fy, double cx, double cy, std::size_t width, std::size_t height) {
             CameraIntrinsics in{fx, fy, cx, cy, width, height};
             in.validate();
             return in;
           }),
           py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("width"), py::arg("height"))
      .def_readonly("fx", &CameraIntrinsics::fx)
      .def_readonly("fy", &CameraIntrinsics::fy)
      .def_readonly("cx", &CameraIntrinsics::cx)
      .def_readonly("cy", &CameraIntrinsics::cy)
      .def_readonly("width", &CameraIntrinsics::width)
      .def_readonly("height", &CameraIntrinsics::height);

  m.def(
      "backproject_pixel",
      [](double u, double v, double d, const CameraIntrinsics& in) {
        const Point3 p = backproject_pixel(u, v, d, in);
        return std::array<double, 3>{p.x, p.y, p.z};
      },
      py::arg("u"), py::arg("v"), py::arg("depth"), py::arg("intrinsics"));

  m.def(
      "project",
      [](const std::array<double, 3>& p, const CameraIntrinsics& in) {
        const Projection q = project({p[0], p[1], p[2]}, in);
        const char* status = q.status == ProjectionStatus::InFrame      ? "in_frame"
                             : q.status == ProjectionStatus::OutOfFrame ? "out_of_frame"
                                                                        : "behind_camera";
        return py::make_tuple(status, q.u, q.v);
      },
      py::arg("point"), py::arg("intrinsics"), "Returns (status, u, v).");

  m.def(
      "backproject",
      [](const F32& depth, const CameraIntrinsics& in) {
        if (depth.ndim() != 2) throw DimensionError("depth must have shape (H, W)");
        DepthMap map(static_cast<std::size_t>(depth.shape(1)), static_cast<std::size_t>(depth.shape(0)));
        std::memcpy(map.values.data(), depth.data(), map.values.size() * sizeof(float));
        const PointCloud cloud = backproject(map, in, RgbImage(map.width, map.height));
        py::array_t<double> out({static_cast<py::ssize_t>(cloud.size()), py::ssize_t{3}});
        auto w = out.mutable_unchecked<2>();
        for (std::size_t i = 0; i < cloud.size(); ++i) {
          const auto k = static_cast<py::ssize_t>(i);
          w(k, 0) = cloud.points[i].x, w(k, 1) = cloud.points[i].y, w(k, 2) = cloud.points[i].z;
        }
        return out;
      },
      py::arg("depth"), py::arg("intrinsics"), "Valid-depth pixels as an (N, 3) array of camera-frame points.");

  m.def(
      "voxelize",
      [](const F64& points, std::optional<F32> colors, std::array<double, 6> bbox, std::array<std::size_t, 3> grid,
         bool mean_position, bool cell_center) {
        const PointCloud cloud = make_cloud(points, colors);
        const VoxelFeatureSpec spec{mean_position, cell_center};
        const VoxelGrid g = voxelize(cloud, make_box(bbox), {grid[0], grid[1], grid[2]}, spec);
        py::array_t<float> features({static_cast<py::ssize_t>(grid[0]), static_cast<py::ssize_t>(grid[1]),
                                     static_cast<py::ssize_t>(grid[2]), static_cast<py::ssize_t>(g.channels)});
        std::memcpy(features.mutable_data(), g.features.data(), g.features.size() * sizeof(float));
        const Tensor<float> tokens = flatten_voxels(g);
        py::array_t<float> tok({static_cast<py::ssize_t>(tokens.dim(0)), static_cast<py::ssize_t>(tokens.dim(1))});
        std::memcpy(tok.mutable_data(), tokens.data().data(), tokens.size() * sizeof(float));
        py::dict d;
        d["features"] = features;
        d["tokens"] = tok;
        d["counts"] = g.counts;
        d["occupied"] = g.occupied_count;
        d["in_bounds"] = g.in_bounds_count;
        d["discarded"] = g.discarded_count;
        return d;
      },
      py::arg("points"), py::arg("colors") = py::none(),
      py::arg("bbox") = std::array<double, 6>{-50, -50, 50, 50, 50, 150},
      py::arg("grid") = std::array<std::size_t, 3>{21, 21, 21}, py::arg("mean_position") = true,
      py::arg("cell_center") = true);

  m.def(
      "alignment_score",
      [](const F64& human, const F64& robot) {
        const AlignmentReport r = alignment_score(distributions(human, "human"), distributions(robot, "robot"));
        py::list rows;
        for (const auto& row : r.rows) {
          rows.append(py::make_tuple(row.human_class, row.robot_class, row.delta, row.p_human, row.p_robot,
                                     row.contribution));
        }
        py::dict agreement;
        for (std::size_t c = 0; c < kNumClasses; ++c) {
          agreement[py::str(std::string(kClassNames[c]))] = r.per_class_agreement[c] ? py::cast(*r.per_class_agreement[c]) : py::none();
        }
        py::dict d;
        d["score"] = r.score;
        d["rows"] = rows;
        d["per_class_agreement"] = agreement;
        return d;
      },
      py::arg("human"), py::arg("robot"));

  m.def(
      "soft_alignment_loss",
      [](const F64& human, const F64& robot) {
        auto tensor = [](const F64& a) {
          if (a.ndim() != 2) throw DimensionError("expected a (T, 8) array");
          return Tensor<double>({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                                std::vector<double>(a.data(), a.data() + a.size()));
        };
        return soft_alignment_loss(tensor(human), tensor(robot)).item();
      },
      py::arg("human"), py::arg("robot"));

  m.def(
      "split_dataset",
      [](std::size_t n, double train, double val, double test, std::uint64_t seed) {
        const SplitIndices s = split_dataset(n, SplitSpec{train, val, test, seed});
        return py::make_tuple(s.train, s.val, s.test);
      },
      py::arg("n"), py::arg("train") = 0.7, py::arg("val") = 0.2, py::arg("test") = 0.1, py::arg("seed") = 0);

  m.def(
      "class_weights", [](const std::vector<int>& labels) { return compute_class_weights(labels); }, py::arg("labels"));

  m.def(
      "synthetic_episode",
      [](std::uint64_t seed, std::size_t frames, std::size_t width, std::size_t height, int scene) {
        SyntheticConfig c;
        c.frames = frames, c.width = width, c.height = height;
        return episode_dict(generate_synthetic_episode(c, seed, "ep_0000", 0, scene));
      },
      py::arg("seed") = 0, py::arg("frames") = 40, py::arg("width") = 64, py::arg("height") = 48,
      py::arg("scene") = 0);

  m.def(
      "generate_corpus",
      [](const std::filesystem::path& root, std::size_t count, std::size_t frames, std::uint64_t seed) {
        SyntheticConfig c;
        c.frames = frames;
        return generate_corpus(root, count, c, seed);
      },
      py::arg("root"), py::arg("count"), py::arg("frames") = 40, py::arg("seed") = 0);

  m.def(
      "load_episode", [](const std::filesystem::path& p) { return episode_dict(load_episode(p)); }, py::arg("path"));

  py::class_<BranchModel>(m, "Model")
      .def_static(
          "load", [](const std::filesystem::path& p) { return BranchModel::from_checkpoint(load_checkpoint(p)); },
          py::arg("path"))
      .def_property_readonly("branch", [](const BranchModel& b) { return std::string(branch_name(b.branch())); })
      .def_property_readonly("config", [](const BranchModel& b) { return format_train_config(b.config()); })
      .def(
          "predict",
          [](const BranchModel& b, const std::filesystem::path& episode) {
            return to_array(b.predict_episode(load_episode(episode)));
          },
          py::arg("episode_dir"), "Per-frame class distributions, shape (T, 8).")
      .def(
          "save", [](const BranchModel& b, const std::filesystem::path& p) { save_checkpoint(b.to_checkpoint(), p); },
          py::arg("path"));

  m.def(
      "train",
      [](const std::string& config_text, const std::filesystem::path& data, const std::filesystem::path& out) {
        const TrainConfig config = parse_train_config(config_text);
        const std::vector<EpisodeSequence> eps = load_corpus(data);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_branch(config, eps);
        }
        save_checkpoint(r.best, out);
        return curve_dict(r);
      },
      py::arg("config"), py::arg("data"), py::arg("checkpoint"),
      "Trains one branch from config text; writes the best checkpoint and returns the curve.");

  m.def(
      "default_config", [](const std::string& b) { return format_train_config(default_train_config(branch_of(b))); },
      py::arg("branch"));
  m.def(
      "reduced_config", [](const std::string& b) { return format_train_config(reduced_train_config(branch_of(b))); },
      py::arg("branch"));

  m.def(
      "gradient_suite",
      [](const std::string& module) {
        py::list out;
        for (const auto& e : run_gradient_suite(module)) {
          py::dict d;
          d["module"] = e.module;
          d["name"] = e.name;
          d["max_relative_error"] = e.result.max_relative_error;
          d["entries"] = e.result.entries_checked;
          d["passed"] = e.result.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("module") = "autodiff");
}
