#include "jex/encoders.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "jex/binio.hpp"
#include "jex/error.hpp"

namespace jex {

std::vector<std::string> normalize_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
}

std::size_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::size_t Vocabulary::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

Vocabulary Vocabulary::build(std::span<const std::string> questions) {
  Vocabulary v;
  for (const auto& q : questions) {
    for (const auto& t : normalize_tokens(q)) v.add(t);
  }
  return v;
}

std::vector<std::size_t> tokenize(std::string_view question, const Vocabulary& vocab,
                                  std::size_t max_tokens) {
  auto words = normalize_tokens(question);
  if (words.empty()) throw std::invalid_argument("empty question");
  if (max_tokens > 0 && words.size() > max_tokens) words.resize(max_tokens);
  std::vector<std::size_t> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(vocab.index(w));
  return ids;
}

Tensor init_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(3.0) / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

GruParams GruParams::zeros(std::size_t vocab, std::size_t embed, std::size_t hidden) {
  GruParams p;
  p.embedding = Tensor::zeros({vocab, embed}, true);
  for (Tensor* w : {&p.w_z, &p.w_r, &p.w_h}) *w = Tensor::zeros({embed, hidden}, true);
  for (Tensor* u : {&p.u_z, &p.u_r, &p.u_h}) *u = Tensor::zeros({hidden, hidden}, true);
  for (Tensor* b : {&p.b_z, &p.b_r, &p.b_h}) *b = Tensor::zeros({1, hidden}, true);
  return p;
}

GruParams GruParams::random(std::size_t vocab, std::size_t embed, std::size_t hidden,
                            std::mt19937_64& rng) {
  GruParams p;
  p.embedding = init_uniform({vocab, embed}, 1, rng);
  for (Tensor* w : {&p.w_z, &p.w_r, &p.w_h}) *w = init_uniform({embed, hidden}, embed, rng);
  for (Tensor* u : {&p.u_z, &p.u_r, &p.u_h}) *u = init_uniform({hidden, hidden}, hidden, rng);
  for (Tensor* b : {&p.b_z, &p.b_r, &p.b_h}) *b = Tensor::zeros({1, hidden}, true);
  return p;
}

NamedTensors GruParams::named(const std::string& prefix) {
  return {{prefix + "embedding", &embedding}, {prefix + "w_z", &w_z}, {prefix + "u_z", &u_z},
          {prefix + "b_z", &b_z},             {prefix + "w_r", &w_r}, {prefix + "u_r", &u_r},
          {prefix + "b_r", &b_r},             {prefix + "w_h", &w_h}, {prefix + "u_h", &u_h},
          {prefix + "b_h", &b_h}};
}

void GruParams::validate() const {
  auto expect = [](const Tensor& t, Shape s, const char* name) {
    if (t.shape != s) {
      throw std::invalid_argument(std::string("gru parameter ") + name + " has shape " +
                                  shape_str(t.shape) + ", expected " + shape_str(s));
    }
  };
  if (embedding.rank() != 2 || u_z.rank() != 2) throw std::invalid_argument("gru parameters missing");
  const auto e = embed_dim(), h = hidden();
  expect(w_z, {e, h}, "w_z");
  expect(w_r, {e, h}, "w_r");
  expect(w_h, {e, h}, "w_h");
  expect(u_z, {h, h}, "u_z");
  expect(u_r, {h, h}, "u_r");
  expect(u_h, {h, h}, "u_h");
  expect(b_z, {1, h}, "b_z");
  expect(b_r, {1, h}, "b_r");
  expect(b_h, {1, h}, "b_h");
}

Var gru_encode(Tape& tape, GruParams& p, std::span<const std::size_t> tokens) {
  if (tokens.empty()) throw std::invalid_argument("gru_encode: empty token list");
  p.validate();
  const Var emb = tape.param(p.embedding);
  const Var wz = tape.param(p.w_z), uz = tape.param(p.u_z), bz = tape.param(p.b_z);
  const Var wr = tape.param(p.w_r), ur = tape.param(p.u_r), br = tape.param(p.b_r);
  const Var wh = tape.param(p.w_h), uh = tape.param(p.u_h), bh = tape.param(p.b_h);
  Var h = tape.constant(Tensor::zeros({1, p.hidden()}));
  for (const auto tok : tokens) {
    if (tok >= p.vocab_size()) {
      throw std::invalid_argument("gru_encode: token id " + std::to_string(tok) +
                                  " outside vocabulary of " + std::to_string(p.vocab_size()));
    }
    const Var x = slice_rows(emb, tok, tok + 1);
    const Var z = sigmoid(add(add(matmul(x, wz), matmul(h, uz)), bz));
    const Var r = sigmoid(add(add(matmul(x, wr), matmul(h, ur)), br));
    const Var cand = tanh(add(add(matmul(x, wh), matmul(mul(r, h), uh)), bh));
    h = add(h, mul(z, sub(cand, h)));
  }
  return h;
}

std::vector<double> gru_encode(std::span<const std::size_t> tokens, const GruParams& params) {
  Tape tape;
  GruParams copy = params;
  return gru_encode(tape, copy, tokens).value().data;
}

void VisualFeatures::validate() const {
  if (grid.rank() != 2) throw std::invalid_argument("visual grid must be a G x n_v matrix");
  if (pooled.size() != grid.dim(1)) {
    throw std::invalid_argument("pooled feature length " + std::to_string(pooled.size()) +
                                " does not match grid channels " + std::to_string(grid.dim(1)));
  }
}

namespace {
constexpr char kFeatureMagic[5] = "JEXF";
constexpr std::uint32_t kFeatureVersion = 1;
}  // namespace

void save_features(const std::filesystem::path& path, const VisualFeatures& f) {
  f.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  binio::put_magic(os, kFeatureMagic);
  binio::put<std::uint32_t>(os, kFeatureVersion);
  binio::put<std::uint32_t>(os, 2);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.cells()));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.channels()));
  for (double v : f.grid.data) binio::put<float>(os, static_cast<float>(v));
  for (double v : f.pooled.data) binio::put<float>(os, static_cast<float>(v));
  if (!os) throw DataError("write failed for " + path.string());
}

VisualFeatures load_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open feature file " + path.string());
  binio::expect_magic(is, kFeatureMagic);
  const auto version = binio::get<std::uint32_t>(is, "version");
  if (version != kFeatureVersion) {
    throw DataError("version mismatch: feature file version " + std::to_string(version));
  }
  const auto ndim = binio::get<std::uint32_t>(is, "ndim");
  if (ndim < 2 || ndim > 3) throw DataError("feature file ndim must be 2 or 3");
  std::vector<std::uint32_t> dims(ndim);
  for (auto& d : dims) {
    d = binio::get<std::uint32_t>(is, "dims");
    if (d == 0) throw DataError("feature file has a zero dimension");
  }
  const std::size_t channels = dims.back();
  std::size_t cells = 1;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) cells *= dims[i];
  const std::size_t count = cells * channels + channels;
  std::vector<float> raw(count);
  binio::read_exact(is, raw.data(), count * sizeof(float), "feature payload");
  if (is.peek() != std::char_traits<char>::eof()) {
    throw DataError("dimension/payload-size mismatch: trailing bytes in " + path.string());
  }
  VisualFeatures f;
  f.grid = Tensor({cells, channels}, std::vector<double>(raw.begin(), raw.begin() + cells * channels));
  f.pooled = Tensor({1, channels}, std::vector<double>(raw.begin() + cells * channels, raw.end()));
  return f;
}

}  // namespace jex
