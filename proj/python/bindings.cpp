#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "dalign/alignment.hpp"
#include "dalign/captions.hpp"
#include "dalign/checkpoint.hpp"
#include "dalign/cli.hpp"
#include "dalign/concepts.hpp"
#include "dalign/error.hpp"
#include "dalign/feature_store.hpp"
#include "dalign/seg_eval.hpp"
#include "dalign/synth.hpp"
#include "dalign/trainer.hpp"

namespace py = pybind11;
using namespace dalign;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Array to_array(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
  Array out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::dict record_dict(const FeatureRecord& r, std::size_t dim) {
  py::dict d;
  d["image_id"] = r.image_id;
  d["cls"] = to_array(r.cls, {static_cast<py::ssize_t>(dim)});
  d["patches"] = to_array(r.patches, {r.grid_h, r.grid_w, static_cast<py::ssize_t>(dim)});
  return d;
}

py::dict caption_dict(const CaptionRecord& r) {
  py::dict d;
  d["image_id"] = r.image_id;
  d["caption"] = r.caption;
  d["prompt"] = r.prompt;
  d["source"] = r.source;
  return d;
}

CaptionRecord caption_from(const py::dict& d) {
  CaptionRecord r;
  r.image_id = d["image_id"].cast<std::string>();
  r.caption = d["caption"].cast<std::string>();
  if (d.contains("prompt")) r.prompt = d["prompt"].cast<std::string>();
  if (d.contains("source")) r.source = d["source"].cast<std::string>();
  return r;
}

std::vector<CaptionRecord> captions_from(const py::list& l) {
  std::vector<CaptionRecord> out;
  for (const auto& item : l) out.push_back(caption_from(item.cast<py::dict>()));
  return out;
}

py::list caption_list(const std::vector<CaptionRecord>& records) {
  py::list l;
  for (const auto& r : records) l.append(caption_dict(r));
  return l;
}

// A loaded checkpoint used for text encoding.
class PyModel {
 public:
  explicit PyModel(const std::filesystem::path& path) : model_(load_checkpoint(path)) {}

  Array encode(const std::vector<std::string>& texts) {
    NoGradGuard guard;
    std::vector<TokenizedCaption> batch;
    for (const auto& t : texts) batch.push_back(tokenize(t, model_.vocab, model_.config.max_len));
    const EncodeResult r = model_.encoder.encode(batch);
    return to_array(r.global);
  }

  Array class_prototypes(const std::vector<std::string>& names,
                         const std::vector<std::string>& templates) {
    const auto e = embed_classes(names, templates, model_.encoder, model_.vocab);
    std::vector<double> flat;
    for (const auto& c : e) flat.insert(flat.end(), c.prototype.begin(), c.prototype.end());
    const auto dim = e.empty() ? 0 : e[0].prototype.size();
    return to_array(flat, {static_cast<py::ssize_t>(e.size()), static_cast<py::ssize_t>(dim)});
  }

  std::vector<std::string> concepts() const { return model_.concepts.names(); }
  std::size_t epoch() const { return model_.epoch; }

 private:
  Model model_;
};

}  // namespace

PYBIND11_MODULE(_dalign, m) {
  m.doc() = "Dense text-patch alignment: training, zero-shot segmentation and data formats.";

  py::register_exception<Error>(m, "DalignError");

  m.def("version", &cli::version);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a dalign subcommand; returns (exit_code, stdout, stderr).");

  m.def(
      "read_feature_store",
      [](const std::filesystem::path& path) {
        const auto store = read_feature_store(path);
        py::list records;
        for (const auto& r : store.records()) records.append(record_dict(r, store.dim()));
        return py::make_tuple(store.dim(), records);
      },
      py::arg("path"), "Returns (d_v, [ {image_id, cls, patches[h, w, d_v]} ]).");

  m.def(
      "write_feature_store",
      [](const std::filesystem::path& path, std::uint32_t dim, const py::list& records) {
        FeatureStore store(dim);
        for (const auto& item : records) {
          const auto d = item.cast<py::dict>();
          const Array cls = d["cls"].cast<Array>();
          const Array patches = d["patches"].cast<Array>();
          if (patches.ndim() != 3) throw ShapeError("patches must be [h, w, d_v]");
          FeatureRecord r;
          r.image_id = d["image_id"].cast<std::string>();
          r.grid_h = static_cast<std::uint16_t>(patches.shape(0));
          r.grid_w = static_cast<std::uint16_t>(patches.shape(1));
          r.cls.assign(cls.data(), cls.data() + cls.size());
          r.patches.assign(patches.data(), patches.data() + patches.size());
          store.add(std::move(r));
        }
        write_feature_store(store, path);
      },
      py::arg("path"), py::arg("dim"), py::arg("records"));

  m.def(
      "read_captions", [](const std::filesystem::path& p) { return caption_list(read_captions(p)); },
      py::arg("path"));
  m.def(
      "write_captions",
      [](const std::filesystem::path& p, const py::list& records) {
        write_captions(captions_from(records), p);
      },
      py::arg("path"), py::arg("records"));
  m.def(
      "degrade_captions",
      [](const py::list& records, double drop_prob, std::uint64_t seed) {
        return caption_list(degrade_captions(captions_from(records), drop_prob, seed));
      },
      py::arg("records"), py::arg("drop_prob"), py::arg("seed") = 0);

  m.def(
      "noun_phrases",
      [](const std::string& text) {
        py::list out;
        for (const auto& np : extract_noun_phrases(text)) {
          out.append(py::make_tuple(np.span.begin, np.span.end, np.head));
        }
        return out;
      },
      py::arg("text"), "Returns [(begin, end, head)] with character offsets.");
  m.def(
      "canonicalize", [](const std::string& w) { return canonicalize(w); }, py::arg("word"));

  m.def(
      "caption_statistics",
      [](const py::list& records, const std::vector<std::string>& concepts,
         std::size_t batch_size, std::uint64_t seed, std::size_t max_len) {
        const auto recs = captions_from(records);
        std::vector<std::string> texts;
        for (const auto& r : recs) texts.push_back(r.caption);
        const auto vocab = build_vocab(texts, 1, 1u << 30);
        const auto examples =
            prepare_examples(recs, nullptr, vocab, ConceptVocabulary(concepts), max_len);
        const auto s = caption_statistics(examples, batch_size, seed);
        py::dict d;
        d["concepts_per_caption"] = s.concepts_per_caption;
        d["unique_concepts_per_batch"] = s.unique_concepts_per_batch;
        d["captions"] = s.captions;
        d["batches"] = s.batches;
        return d;
      },
      py::arg("records"), py::arg("concepts"), py::arg("batch_size") = 64, py::arg("seed") = 0,
      py::arg("max_len") = 32);

  m.def(
      "pool_text_concept",
      [](const Array& dense, const std::vector<std::size_t>& rows) {
        return to_array(pool_text_concept(to_tensor(dense), rows));
      },
      py::arg("dense"), py::arg("rows"));
  m.def(
      "pool_visual_concept",
      [](const Array& patches, const Array& text_concept, double tau) {
        std::vector<double> w;
        const auto out = pool_visual_concept(to_tensor(patches), to_tensor(text_concept), tau, &w);
        return py::make_tuple(to_array(out),
                              to_array(w, {static_cast<py::ssize_t>(w.size())}));
      },
      py::arg("patches"), py::arg("text_concept"), py::arg("tau") = 0.1,
      "Returns (pooled vector, pooling weights).");
  m.def(
      "global_contrastive_loss",
      [](const Array& visual, const Array& text, double scale) {
        return global_contrastive_loss(to_tensor(visual), to_tensor(text), Tensor::scalar(scale))
            .item();
      },
      py::arg("visual"), py::arg("text"), py::arg("logit_scale"));
  m.def(
      "concept_loss",
      [](const Array& visual_concepts, const std::vector<std::size_t>& labels,
         const Array& classifier) {
        return concept_loss(to_tensor(visual_concepts), labels, to_tensor(classifier)).item();
      },
      py::arg("visual_concepts"), py::arg("labels"), py::arg("classifier"));

  m.def(
      "miou",
      [](const py::array_t<std::uint64_t, py::array::c_style | py::array::forcecast>& confusion,
         const std::vector<std::string>& names) {
        if (confusion.ndim() != 2 || confusion.shape(0) != confusion.shape(1)) {
          throw ShapeError("confusion matrix must be square");
        }
        const auto n = static_cast<std::size_t>(confusion.shape(0));
        ConfusionMatrix cm(n);
        for (std::size_t t = 0; t < n; ++t)
          for (std::size_t p = 0; p < n; ++p) cm.add(t, p, confusion.data()[t * n + p]);
        const auto r = miou(cm, names);
        py::list per_class;
        for (const auto& v : r.iou) per_class.append(v ? py::cast(*v) : py::none());
        return py::make_tuple(r.miou, per_class);
      },
      py::arg("confusion"), py::arg("names"), "Returns (mIoU, per-class IoU or None).");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def("encode", &PyModel::encode, py::arg("texts"), "Global text features, [n, d].")
      .def("class_prototypes", &PyModel::class_prototypes, py::arg("names"),
           py::arg("templates"))
      .def_property_readonly("concepts", &PyModel::concepts)
      .def_property_readonly("epoch", &PyModel::epoch);
}
