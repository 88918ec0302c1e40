#include "jex/model.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "jex/attention.hpp"
#include "jex/binio.hpp"
#include "jex/error.hpp"

namespace jex {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::concat: return "concat";
    case Variant::dual: return "dual";
    case Variant::grid: return "grid";
    case Variant::jex: return "jex";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::concat, Variant::dual, Variant::grid, Variant::jex}) {
    if (variant_name(v) == name) return v;
  }
  throw std::invalid_argument("unknown model variant '" + std::string(name) + "'");
}

namespace {

std::size_t fusion_visual_dim(const ModelConfig& c) {
  switch (c.variant) {
    case Variant::concat: return c.visual_dim + c.question_dim;
    default: return c.visual_dim;
  }
}

bool uses_grid_proj(Variant v) { return v == Variant::concat || v == Variant::dual; }

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::size_t vocab_size,
                              std::size_t num_answers, std::mt19937_64& rng) {
  const auto& c = config;
  if (c.glimpses == 0 || c.t_e % c.glimpses != 0) {
    throw std::invalid_argument("t_e must be divisible by the glimpse count");
  }
  if (num_answers == 0) throw std::invalid_argument("model needs at least one answer");
  ModelParams p;
  p.config = c;
  p.gru = GruParams::random(vocab_size, c.embed_dim, c.question_dim, rng);
  p.fusion = TuckerParams::random(c.question_dim, fusion_visual_dim(c), c.t_q,
                                  std::min(c.t_v, fusion_visual_dim(c)), c.t_e, rng);
  if (uses_grid_proj(c.variant)) p.grid_proj = init_uniform({c.visual_dim, c.t_e}, c.visual_dim, rng);
  const std::size_t group = c.t_e / c.glimpses;
  p.attn_iq = init_uniform({group, c.glimpses}, group, rng);
  if (c.variant == Variant::jex) p.attn_exemplar = init_uniform({group, c.glimpses}, group, rng);
  const std::size_t attended = p.attended_dim();
  p.answer_fusion = TuckerParams::random(c.question_dim, attended, c.t_q, std::min(c.t_v, attended),
                                         c.t_e, rng);
  p.classifier = init_uniform({c.t_e, num_answers}, c.t_e, rng);
  p.classifier_bias = Tensor::zeros({1, num_answers}, true);
  p.validate();
  return p;
}

std::size_t ModelParams::attended_dim() const {
  const std::size_t per_source = config.glimpses * config.visual_dim;
  return config.variant == Variant::jex ? 2 * per_source : per_source;
}

NamedTensors ModelParams::named() {
  NamedTensors out = gru.named("gru.");
  for (auto& nt : fusion.named("fusion.")) out.push_back(nt);
  if (!grid_proj.data.empty()) out.emplace_back("attention.grid_proj", &grid_proj);
  out.emplace_back("attention.iq", &attn_iq);
  if (!attn_exemplar.data.empty()) out.emplace_back("attention.exemplar", &attn_exemplar);
  for (auto& nt : answer_fusion.named("answer_fusion.")) out.push_back(nt);
  out.emplace_back("classifier.weight", &classifier);
  out.emplace_back("classifier.bias", &classifier_bias);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->named()) out.emplace_back(name, t);
  return out;
}

void ModelParams::validate() const {
  const auto& c = config;
  gru.validate();
  fusion.validate();
  answer_fusion.validate();
  auto fail = [](const std::string& what) { throw std::invalid_argument("model parameters: " + what); };
  if (gru.hidden() != c.question_dim || fusion.n_q() != c.question_dim ||
      answer_fusion.n_q() != c.question_dim) {
    fail("question dimension mismatch");
  }
  if (fusion.n_v() != fusion_visual_dim(c)) fail("fusion visual dimension mismatch");
  if (fusion.t_e() != c.t_e || answer_fusion.t_e() != c.t_e) fail("t_e mismatch");
  if (c.glimpses == 0 || c.t_e % c.glimpses != 0) fail("t_e not divisible by glimpses");
  const Shape attn_shape{c.t_e / c.glimpses, c.glimpses};
  if (attn_iq.shape != attn_shape) fail("attention weights have shape " + shape_str(attn_iq.shape));
  if ((c.variant == Variant::jex) != !attn_exemplar.data.empty()) fail("exemplar attention presence");
  if (c.variant == Variant::jex && attn_exemplar.shape != attn_shape) fail("exemplar attention shape");
  if (uses_grid_proj(c.variant) != !grid_proj.data.empty()) fail("grid projection presence");
  if (!grid_proj.data.empty() && grid_proj.shape != Shape{c.visual_dim, c.t_e}) fail("grid projection shape");
  if (answer_fusion.n_v() != attended_dim()) fail("answer fusion input dimension");
  if (classifier.rank() != 2 || classifier.dim(0) != c.t_e) fail("classifier shape");
  if (classifier_bias.shape != Shape{1, classifier.dim(1)}) fail("classifier bias shape");
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : named()) t->zero_grad();
}

ModelParams promote_to_jex(const ModelParams& grid, std::mt19937_64& rng) {
  if (grid.config.variant != Variant::grid) {
    throw std::invalid_argument("promote_to_jex: expected grid-variant parameters");
  }
  ModelParams p = grid;
  p.config.variant = Variant::jex;
  const std::size_t group = p.config.t_e / p.config.glimpses;
  p.attn_exemplar = init_uniform({group, p.config.glimpses}, group, rng);
  const Tensor& old = grid.answer_fusion.tau_v;
  Tensor widened = Tensor::zeros({2 * old.dim(0), old.dim(1)}, true);
  std::copy(old.data.begin(), old.data.end(), widened.data.begin());
  p.answer_fusion.tau_v = std::move(widened);
  for (auto& [name, t] : p.named()) t->grad.clear();
  p.validate();
  return p;
}

ForwardPass forward_model(Tape& tape, ModelParams& params, const VisualFeatures& features,
                          std::span<const std::size_t> tokens, const ExemplarStore* store,
                          std::optional<std::uint64_t> exclude_id) {
  const auto& c = params.config;
  features.validate();
  if (features.channels() != c.visual_dim) {
    throw std::invalid_argument("forward_model: features have " +
                                std::to_string(features.channels()) + " channels, model expects " +
                                std::to_string(c.visual_dim));
  }
  if (c.variant == Variant::jex && store == nullptr) {
    throw std::invalid_argument("forward_model: the jex variant requires an exemplar store");
  }
  const std::size_t cells = features.cells();
  const auto used = tokens.size() > c.max_question_tokens && c.max_question_tokens > 0
                        ? tokens.first(c.max_question_tokens)
                        : tokens;

  const Var q = gru_encode(tape, params.gru, used);
  const Var grid = tape.constant(features.grid);
  Var joint;
  switch (c.variant) {
    case Variant::grid:
    case Variant::jex:
      joint = tucker_fuse(tape, params.fusion, q, grid);
      break;
    case Variant::dual:
    case Variant::concat: {
      const Var pooled = tape.constant(features.pooled);
      const Var input = c.variant == Variant::dual ? pooled : concat(std::vector<Var>{pooled, q});
      const Var global = tucker_fuse(tape, params.fusion, q, input);
      // Broadcast the image-level joint vector over cells and gate the
      // projected grid features with it.
      const Var ones = tape.constant(Tensor::filled({cells, 1}, 1.0));
      const Var lifted = matmul(grid, tape.param(params.grid_proj));
      joint = mul(lifted, matmul(ones, global));
      break;
    }
  }

  ForwardPass pass;
  pass.joint = Tensor(joint.shape(), joint.value().data);
  const auto alpha_iq = compute_attention(joint, tape.param(params.attn_iq), c.glimpses);
  for (const auto& a : alpha_iq) pass.alpha_iq.push_back(a.value().data);
  Var attended = attend(grid, alpha_iq);

  if (c.variant == Variant::jex) {
    if (store->dim() != cells * c.t_e) {
      throw std::invalid_argument("forward_model: store rows have " + std::to_string(store->dim()) +
                                  " values, joint embeddings have " + std::to_string(cells * c.t_e));
    }
    // Retrieval is not differentiable; the exemplar enters as a constant.
    auto hit = store->nearest(pass.joint, exclude_id);
    pass.exemplar_id = hit.id;
    const Var exemplar = tape.constant(Tensor({cells, c.t_e}, std::move(hit.embedding)));
    const auto alpha_e = compute_attention(exemplar, tape.param(params.attn_exemplar), c.glimpses);
    for (const auto& a : alpha_e) pass.alpha_e.push_back(a.value().data);
    attended = concat(std::vector<Var>{attended, attend(grid, alpha_e)});
  }

  const Var fused = tucker_fuse(tape, params.answer_fusion, q, attended);
  pass.logits = add(matmul(tanh(fused), tape.param(params.classifier)),
                    tape.param(params.classifier_bias));
  return pass;
}

Tensor joint_embedding(ModelParams& params, const VisualFeatures& features,
                       std::span<const std::size_t> tokens) {
  const auto& c = params.config;
  if (c.variant != Variant::grid && c.variant != Variant::jex) {
    throw std::invalid_argument("joint_embedding: only grid-mode variants fuse per cell");
  }
  Tape tape;
  const auto used = tokens.size() > c.max_question_tokens && c.max_question_tokens > 0
                        ? tokens.first(c.max_question_tokens)
                        : tokens;
  const Var q = gru_encode(tape, params.gru, used);
  return tucker_fuse(tape, params.fusion, q, tape.constant(features.grid)).value();
}

std::vector<std::size_t> Model::encode_question(std::string_view question) const {
  return tokenize(question, vocab, params.config.max_question_tokens);
}

// ---- Checkpoint -------------------------------------------------------------

namespace {

constexpr char kModelMagic[5] = "JEXM";
constexpr std::uint32_t kModelVersion = 1;

void put_record(std::ostream& os, const std::string& name, const Tensor& t) {
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape) binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (double v : t.data) binio::put<double>(os, v);
}

std::vector<std::pair<std::string, double>> meta_scalars(const ModelConfig& c) {
  return {{"meta/variant", static_cast<double>(static_cast<int>(c.variant))},
          {"meta/grid_cells", static_cast<double>(c.grid_cells)},
          {"meta/visual_dim", static_cast<double>(c.visual_dim)},
          {"meta/glimpses", static_cast<double>(c.glimpses)},
          {"meta/max_question_tokens", static_cast<double>(c.max_question_tokens)}};
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  model.params.validate();
  const auto named = model.params.named();
  const auto meta = meta_scalars(model.params.config);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  binio::put_magic(os, kModelMagic);
  binio::put<std::uint32_t>(os, kModelVersion);
  const std::size_t count =
      meta.size() + named.size() + model.vocab.size() + model.answers.size();
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(count));
  for (const auto& [name, value] : meta) put_record(os, name, Tensor::scalar(value));
  for (const auto& [name, t] : named) {
    if (!t->all_finite()) throw NumericError("checkpoint: parameter " + name + " is not finite");
    put_record(os, name, *t);
  }
  for (std::size_t i = 0; i < model.vocab.size(); ++i) {
    put_record(os, "vocab/" + model.vocab.token(i), Tensor::scalar(static_cast<double>(i)));
  }
  for (std::size_t i = 0; i < model.answers.size(); ++i) {
    put_record(os, "answer/" + model.answers.at(i), Tensor::scalar(static_cast<double>(i)));
  }
  if (!os) throw DataError("write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  binio::expect_magic(is, kModelMagic);
  const auto version = binio::get<std::uint32_t>(is, "version");
  if (version != kModelVersion) throw DataError("version mismatch: checkpoint version " + std::to_string(version));
  const auto count = binio::get<std::uint32_t>(is, "record count");

  std::map<std::string, Tensor> records;
  std::map<std::size_t, std::string> vocab_by_index, answers_by_index;
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto len = binio::get<std::uint32_t>(is, "name length");
    if (len > (1u << 20)) throw DataError("corrupted checkpoint: implausible name length");
    std::string name(len, '\0');
    binio::read_exact(is, name.data(), len, "record name");
    const auto ndim = binio::get<std::uint32_t>(is, "ndim");
    if (ndim == 0 || ndim > 3) throw DataError("corrupted checkpoint: bad rank for " + name);
    Shape shape(ndim);
    for (auto& d : shape) {
      d = binio::get<std::uint32_t>(is, "dims");
      if (d == 0) throw DataError("corrupted checkpoint: zero dimension in " + name);
    }
    std::vector<double> data(numel(shape));
    binio::read_exact(is, data.data(), data.size() * sizeof(double), "payload of " + name);
    if (name.rfind("vocab/", 0) == 0 || name.rfind("answer/", 0) == 0) {
      const auto idx = static_cast<std::size_t>(data.at(0));
      auto& dst = name[0] == 'v' ? vocab_by_index : answers_by_index;
      dst[idx] = name.substr(name.find('/') + 1);
      continue;
    }
    if (!records.emplace(name, Tensor(std::move(shape), std::move(data), true)).second) {
      throw DataError("corrupted checkpoint: duplicate record " + name);
    }
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("corrupted checkpoint: trailing bytes");

  auto scalar = [&](const std::string& name) -> std::size_t {
    auto it = records.find(name);
    if (it == records.end()) throw DataError("checkpoint missing " + name);
    return static_cast<std::size_t>(it->second.data.at(0));
  };
  Model m;
  auto& c = m.params.config;
  const auto variant_index = scalar("meta/variant");
  if (variant_index > 3) throw DataError("checkpoint has an unknown variant");
  c.variant = static_cast<Variant>(variant_index);
  c.grid_cells = scalar("meta/grid_cells");
  c.visual_dim = scalar("meta/visual_dim");
  c.glimpses = scalar("meta/glimpses");
  c.max_question_tokens = scalar("meta/max_question_tokens");

  // Bind every expected tensor by name, then read hyperparameters off shapes.
  if (uses_grid_proj(c.variant)) m.params.grid_proj = Tensor({1}, {0.0});
  if (c.variant == Variant::jex) m.params.attn_exemplar = Tensor({1}, {0.0});
  for (auto& [name, t] : m.params.named()) {
    auto it = records.find(name);
    if (it == records.end()) throw DataError("checkpoint missing tensor " + name);
    *t = std::move(it->second);
  }
  c.embed_dim = m.params.gru.embed_dim();
  c.question_dim = m.params.gru.hidden();
  c.t_q = m.params.fusion.t_q();
  c.t_v = m.params.fusion.t_v();
  c.t_e = m.params.fusion.t_e();
  try {
    m.params.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint inconsistent: ") + e.what());
  }

  std::vector<std::string> answers;
  for (std::size_t i = 0; i < answers_by_index.size(); ++i) {
    auto it = answers_by_index.find(i);
    if (it == answers_by_index.end()) throw DataError("checkpoint answer indices are not dense");
    answers.push_back(it->second);
  }
  m.answers = AnswerDictionary(std::move(answers));
  if (m.answers.size() != m.params.num_answers()) throw DataError("checkpoint answer count mismatch");
  for (std::size_t i = 0; i < vocab_by_index.size(); ++i) {
    auto it = vocab_by_index.find(i);
    if (it == vocab_by_index.end()) throw DataError("checkpoint vocabulary indices are not dense");
    if (m.vocab.add(it->second) != i) throw DataError("checkpoint vocabulary out of order");
  }
  if (m.vocab.size() != m.params.gru.vocab_size()) throw DataError("checkpoint vocabulary size mismatch");
  return m;
}

}  // namespace jex
