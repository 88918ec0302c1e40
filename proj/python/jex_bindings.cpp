#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "jex/cli.hpp"
#include "jex/encoders.hpp"
#include "jex/error.hpp"
#include "jex/exemplar.hpp"
#include "jex/fusion.hpp"
#include "jex/kdtree.hpp"
#include "jex/model.hpp"
#include "jex/owsplit.hpp"
#include "jex/toycorpus.hpp"

namespace py = pybind11;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

jex::Tensor to_tensor(const Array& a) {
  jex::Shape shape(a.shape(), a.shape() + a.ndim());
  return jex::Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const jex::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  Array out(shape);
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

std::string split_json(const std::vector<std::string>& instances, const std::vector<std::string>& questions,
                       const std::vector<std::string>& annotations) {
  if (questions.size() != annotations.size()) throw std::invalid_argument("need one annotations file per questions file");
  jex::InstanceIndex index;
  for (const auto& p : instances) index.add_file(p);
  std::vector<jex::IqaTriplet> triplets;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    auto part = jex::load_triplets(std::filesystem::path(questions[i]), std::filesystem::path(annotations[i]));
    triplets.insert(triplets.end(), part.begin(), part.end());
  }
  const auto unknown = jex::select_unknown(index.stats());
  return jex::split_triplets(triplets, index, unknown, jex::SynonymLexicon::defaults(index.categories()))
      .to_json()
      .dump();
}

class Predictor {
 public:
  Predictor(const std::string& checkpoint, const std::optional<std::string>& store)
      : model_(jex::load_checkpoint(checkpoint)) {
    if (store) store_ = jex::load_store(*store);
    if (model_.params.config.variant == jex::Variant::jex && !store_) {
      throw jex::DataError("jex checkpoints need an exemplar store");
    }
  }

  py::dict answer(const std::string& feature_file, const std::string& question) {
    const auto features = jex::load_features(feature_file);
    const auto tokens = model_.encode_question(question);
    jex::Tape tape;
    const auto pass = jex::forward_model(tape, model_.params, features, tokens, store_ ? &*store_ : nullptr);
    py::dict d;
    d["answer"] = jex::predict(pass.logits.value().data, model_.answers);
    d["variant"] = std::string(jex::variant_name(model_.params.config.variant));
    d["alpha_iq"] = pass.alpha_iq;
    if (pass.exemplar_id) {
      d["alpha_e"] = pass.alpha_e;
      d["exemplar_id"] = *pass.exemplar_id;
    }
    return d;
  }

  std::string variant() const { return std::string(jex::variant_name(model_.params.config.variant)); }

 private:
  jex::Model model_;
  std::optional<jex::ExemplarStore> store_;
};

}  // namespace

PYBIND11_MODULE(_jex, m) {
  m.doc() = "Tucker-fusion VQA models with exemplar retrieval";
  py::register_exception<jex::DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<jex::NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("param_count", [](std::uint64_t nq, std::uint64_t nv, std::uint64_t ne, std::uint64_t tq,
                          std::uint64_t tv, std::uint64_t te) {
    const auto c = jex::param_count(nq, nv, ne, tq, tv, te);
    return py::make_tuple(c.naive, c.tucker);
  }, py::arg("n_q") = 2400, py::arg("n_v") = 2048, py::arg("n_e") = 2000, py::arg("t_q") = 310,
        py::arg("t_v") = 310, py::arg("t_e") = 510);

  m.def("tucker_fuse", [](const Array& q, const Array& v, const Array& core, const Array& tau_q, const Array& tau_v) {
    jex::TuckerParams p{to_tensor(core), to_tensor(tau_q), to_tensor(tau_v)};
    p.validate();
    const auto vt = to_tensor(v);
    if (vt.shape.size() != 2) throw std::invalid_argument("v must be 2-D");
    return to_array(jex::tucker_fuse(std::span<const double>(q.data(), q.size()), vt, p));
  }, py::arg("q"), py::arg("v"), py::arg("core"), py::arg("tau_q"), py::arg("tau_v"));

  m.def("maxpool1d", [](const std::vector<double>& x, std::size_t buckets) { return jex::maxpool1d(x, buckets); });

  m.def("nearest", [](py::array_t<float, py::array::c_style | py::array::forcecast> points, const std::vector<double>& query) {
    if (points.ndim() != 2) throw std::invalid_argument("points must be 2-D");
    jex::KdTree tree(std::vector<float>(points.data(), points.data() + points.size()),
                     static_cast<std::size_t>(points.shape(1)));
    const auto hit = tree.nearest(query);
    if (!hit) throw std::invalid_argument("empty point set");
    return hit->row;
  }, py::arg("points"), py::arg("query"));

  m.def("load_features", [](const std::string& path) {
    const auto f = jex::load_features(path);
    return py::make_tuple(to_array(f.grid), to_array(f.pooled));
  });

  m.def("generate_toy", [](const std::string& out, std::uint64_t seed, std::size_t train_scenes, std::size_t val_scenes) {
    jex::ToySpec spec;
    spec.seed = seed;
    spec.train_scenes = train_scenes;
    spec.val_scenes = val_scenes;
    const auto corpus = jex::generate_toy(spec);
    jex::write_toy(corpus, out);
    return corpus.triplets.size();
  }, py::arg("out"), py::arg("seed") = 0, py::arg("train_scenes") = 600, py::arg("val_scenes") = 300);

  m.def("split_json", &split_json, py::arg("instances"), py::arg("questions"), py::arg("annotations"));

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = jex::cli::run(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  });

  py::class_<Predictor>(m, "Predictor")
      .def(py::init<const std::string&, const std::optional<std::string>&>(), py::arg("checkpoint"),
           py::arg("store") = py::none())
      .def_property_readonly("variant", &Predictor::variant)
      .def("answer", &Predictor::answer, py::arg("features"), py::arg("question"));
}
