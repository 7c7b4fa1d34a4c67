#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "aniformer/cli.hpp"
#include "aniformer/errors.hpp"
#include "aniformer/loss.hpp"
#include "aniformer/mesh.hpp"
#include "aniformer/model.hpp"
#include "aniformer/synth.hpp"
#include "aniformer/train.hpp"

namespace py = pybind11;
using namespace aniformer;

namespace {

using Points = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Faces = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;

std::vector<Vec3> to_points(const Points& a, const char* what) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw py::value_error(std::string(what) + " must have shape (V, 3)");
  std::vector<Vec3> out(static_cast<std::size_t>(a.shape(0)));
  const double* p = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {p[3 * i], p[3 * i + 1], p[3 * i + 2]};
  return out;
}

std::vector<Face> to_faces(const Faces& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw py::value_error("faces must have shape (F, 3)");
  std::vector<Face> out(static_cast<std::size_t>(a.shape(0)));
  const std::uint32_t* p = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {p[3 * i], p[3 * i + 1], p[3 * i + 2]};
  return out;
}

MeshSequence to_sequence(const Points& frames, const Faces& faces) {
  if (frames.ndim() != 3 || frames.shape(2) != 3) throw py::value_error("frames must have shape (T, V, 3)");
  MeshSequence seq;
  seq.faces = to_faces(faces);
  const auto t = static_cast<std::size_t>(frames.shape(0)), v = static_cast<std::size_t>(frames.shape(1));
  const double* p = frames.data();
  seq.frames.assign(t, std::vector<Vec3>(v));
  for (std::size_t f = 0; f < t; ++f)
    for (std::size_t i = 0; i < v; ++i) {
      const double* q = p + (f * v + i) * 3;
      seq.frames[f][i] = {q[0], q[1], q[2]};
    }
  seq.validate();
  return seq;
}

py::array_t<double> from_points(const std::vector<Vec3>& points) {
  py::array_t<double> out({static_cast<py::ssize_t>(points.size()), py::ssize_t{3}});
  double* p = out.mutable_data();
  for (const Vec3& v : points) p = std::copy(v.begin(), v.end(), p);
  return out;
}

py::array_t<std::uint32_t> from_faces(const std::vector<Face>& faces) {
  py::array_t<std::uint32_t> out({static_cast<py::ssize_t>(faces.size()), py::ssize_t{3}});
  std::uint32_t* p = out.mutable_data();
  for (const Face& f : faces) p = std::copy(f.begin(), f.end(), p);
  return out;
}

py::array_t<double> from_frames(const MeshSequence& seq) {
  const auto t = static_cast<py::ssize_t>(seq.frame_count()), v = static_cast<py::ssize_t>(seq.vertex_count());
  py::array_t<double> out({t, v, py::ssize_t{3}});
  double* p = out.mutable_data();
  for (const auto& frame : seq.frames)
    for (const Vec3& x : frame) p = std::copy(x.begin(), x.end(), p);
  return out;
}

Tensor<double> sequence_of(const Points& frames, const Faces& faces) {
  return sequence_tensor<double>(to_sequence(frames, faces));
}

py::dict eval_dict(const EvalReport& r) {
  py::dict d;
  d["seen_pmd"] = r.seen_pmd;
  d["unseen_pmd"] = r.unseen_pmd;
  return d;
}

// Runs a library call with the GIL released; training can take minutes.
template <typename Fn>
auto nogil(Fn fn) {
  py::gil_scoped_release release;
  return fn();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Mesh sequence animation toolkit: synthetic data, model inference, losses, training.";
  m.attr("__version__") = tool_version();

  // Every library error is catchable as aniformer.Error.
  const auto& base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<DimensionError>(m, "DimensionError", base);
  py::register_exception<ParseError>(m, "ParseError", base);
  py::register_exception<IoError>(m, "IoError", base);
  py::register_exception<NumericalError>(m, "NumericalError", base);

  // Meshes as (vertices (V, 3) float64, faces (F, 3) uint32).
  m.def(
      "load_obj",
      [](const std::filesystem::path& path) {
        const Mesh mesh = load_obj(path);
        return py::make_tuple(from_points(mesh.vertices), from_faces(mesh.faces));
      },
      py::arg("path"));
  m.def(
      "save_obj",
      [](const std::filesystem::path& path, const Points& vertices, const Faces& faces) {
        Mesh mesh{to_points(vertices, "vertices"), to_faces(faces)};
        mesh.validate();
        save_obj(mesh, path);
      },
      py::arg("path"), py::arg("vertices"), py::arg("faces"));
  m.def(
      "load_sequence",
      [](const std::filesystem::path& dir) {
        SequenceManifest info;
        const MeshSequence seq = load_sequence(dir, &info);
        return py::make_tuple(from_frames(seq), from_faces(seq.faces), to_string(info.role));
      },
      py::arg("dir"), "Returns (frames (T, V, 3), faces, role).");
  m.def(
      "save_sequence",
      [](const std::filesystem::path& dir, const Points& frames, const Faces& faces, const std::string& role) {
        save_sequence(to_sequence(frames, faces), dir, parse_sequence_role(role));
      },
      py::arg("dir"), py::arg("frames"), py::arg("faces"), py::arg("role") = "generated");

  m.def(
      "pmd", [](const Points& a, const Points& b, const Faces& faces) {
        return pmd(to_sequence(a, faces), to_sequence(b, faces));
      },
      py::arg("generated"), py::arg("ground_truth"), py::arg("faces"));
  m.def(
      "pmd_per_frame", [](const Points& a, const Points& b, const Faces& faces) {
        return pmd_per_frame(to_sequence(a, faces), to_sequence(b, faces));
      },
      py::arg("generated"), py::arg("ground_truth"), py::arg("faces"));
  m.def(
      "reconstruction_loss",
      [](const Points& m, const Points& g, const Faces& faces) {
        return reconstruction_loss(sequence_of(m, faces), sequence_of(g, faces)).item();
      },
      py::arg("generated"), py::arg("ground_truth"), py::arg("faces"));
  m.def(
      "motion_loss",
      [](const Points& m, const Points& g, const Faces& faces, const std::string& penalty) {
        return motion_loss(sequence_of(m, faces), sequence_of(g, faces), parse_penalty(penalty)).item();
      },
      py::arg("generated"), py::arg("reference"), py::arg("faces"), py::arg("penalty") = "abs");
  m.def(
      "appearance_loss",
      [](const Points& m, const Points& target, const Faces& faces, const std::string& penalty) {
        const Mesh n{to_points(target, "target"), to_faces(faces)};
        return appearance_loss(sequence_of(m, faces), mesh_tensor<double>(n), build_neighborhood(n),
                               parse_penalty(penalty))
            .item();
      },
      py::arg("generated"), py::arg("target"), py::arg("faces"), py::arg("penalty") = "abs");

  m.def(
      "make_pair",
      [](std::uint64_t motion, std::uint64_t driving_shape, std::uint64_t target_shape, std::uint64_t sample,
         std::size_t frames) {
        const SamplePair p = make_pair(motion, driving_shape, target_shape, sample, SynthConfig{}, frames);
        py::dict d;
        d["driving"] = from_frames(p.driving);
        d["ground_truth"] = from_frames(p.ground_truth);
        d["target"] = from_points(p.target.vertices);
        d["faces"] = from_faces(p.target.faces);
        d["permutation"] = p.permutation;
        return d;
      },
      py::arg("motion_seed"), py::arg("driving_shape_seed"), py::arg("target_shape_seed"), py::arg("sample_seed"),
      py::arg("frames") = 30, "Synthetic (driving, target, ground truth) triple with the default generator.");

  py::class_<AniFormer<float>>(m, "Model")
      .def(py::init([](const std::string& config_json, std::uint64_t seed) {
             return AniFormer<float>(model_config_from_json(config_json), seed);
           }),
           py::arg("config_json") = "{}", py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& path) { return load_model<float>(path); }, py::arg("path"))
      .def("save", [](const AniFormer<float>& self, const std::filesystem::path& path) { save_model(self, path); },
           py::arg("path"))
      .def_property_readonly("config_json", [](const AniFormer<float>& self) { return model_config_to_json(self.config()); })
      .def_property_readonly("parameter_count", &AniFormer<float>::parameter_count)
      .def(
          "animate",
          [](const AniFormer<float>& self, const Points& driving, const Faces& driving_faces, const Points& target,
             const Faces& target_faces) {
            const MeshSequence d = to_sequence(driving, driving_faces);
            Mesh n{to_points(target, "target"), to_faces(target_faces)};
            n.validate();
            return from_frames(nogil([&] { return sliding_window_animate(self, d, n); }));
          },
          py::arg("driving"), py::arg("driving_faces"), py::arg("target"), py::arg("target_faces"),
          "Sliding-window animation: one output frame per driving frame, in the target's topology.");

  m.def(
      "generate_dataset",
      [](const std::string& options_json, const std::filesystem::path& out) {
        const DatasetManifest manifest = build_manifest(dataset_options_from_json(options_json));
        nogil([&] {
          write_dataset(manifest, out);
          return 0;
        });
      },
      py::arg("options_json"), py::arg("out"));
  m.def(
      "train",
      [](const std::filesystem::path& data, const std::string& config_json, const std::filesystem::path& out) {
        const DatasetManifest manifest = read_dataset(data);
        const TrainingConfig config = training_config_from_json(config_json);
        TrainOptions options;
        options.out_dir = out;
        const TrainResult result = nogil([&] { return train(manifest, config, options); });
        py::dict d;
        d["steps"] = result.steps;
        if (result.baseline) d["baseline"] = eval_dict(*result.baseline);
        if (result.final_eval) d["final"] = eval_dict(*result.final_eval);
        return d;
      },
      py::arg("data"), py::arg("config_json"), py::arg("out"), "Trains into `out`; returns the evaluation summary.");
  m.def("toy_gradcheck", [] {
    const ToyGradcheck g = nogil([] { return toy_objective_gradcheck(); });
    py::dict d;
    d["passed"] = g.report.passed;
    d["max_relative_error"] = g.report.worst;
    d["parameter_count"] = g.parameter_count;
    d["vertex_count"] = g.vertex_count;
    return d;
  });
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = nogil([&] { return run_cli(args, out, err); });
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one command line; returns (exit_code, stdout, stderr).");
}
