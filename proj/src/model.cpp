#include "recps/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "recps/errors.hpp"
#include "recps/hash.hpp"
#include "recps/rng.hpp"

namespace recps {

std::string_view to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::mf_logit: return "mf-logit";
    case ModelFamily::ncf: return "ncf";
    case ModelFamily::lightgcn: return "lightgcn";
  }
  return "unknown";
}

ModelFamily parse_model_family(std::string_view name) {
  if (name == "mf-logit" || name == "mf") return ModelFamily::mf_logit;
  if (name == "ncf") return ModelFamily::ncf;
  if (name == "lightgcn" || name == "lgcn") return ModelFamily::lightgcn;
  throw ConfigError("unknown model family '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (patience < 0) throw ConfigError("patience must be non-negative");
  if (dim == 0) throw ConfigError("dim must be positive");
  if (layers < 0) throw ConfigError("layers must be non-negative");
  if (eval_k == 0) throw ConfigError("eval_k must be positive");
  if (!(init_scale >= 0)) throw ConfigError("init_scale must be non-negative");
}

double sigmoid(double x) noexcept {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<std::size_t> ncf_layer_widths(std::size_t dim) {
  return {2 * dim, dim, std::max<std::size_t>(1, dim / 2), 1};
}

// ---------------------------------------------------------------------------

BipartiteGraph::BipartiteGraph(std::size_t num_users, std::size_t num_items,
                               std::vector<InteractionKey> edges)
    : num_users_(num_users), num_items_(num_items), edges_(std::move(edges)) {
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  const std::size_t n = num_nodes();
  std::vector<std::size_t> degree(n, 0);
  for (const auto& e : edges_) {
    if (e.user >= num_users_ || e.item >= num_items_)
      throw std::out_of_range("graph edge outside vocabulary");
    ++degree[e.user];
    ++degree[num_users_ + e.item];
  }
  offsets_.assign(n + 1, 0);
  for (std::size_t v = 0; v < n; ++v) offsets_[v + 1] = offsets_[v] + degree[v];
  neighbours_.resize(offsets_[n]);
  weights_.resize(offsets_[n]);
  std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
  for (const auto& e : edges_) {
    const std::size_t a = e.user;
    const std::size_t b = num_users_ + e.item;
    const double w = 1.0 / std::sqrt(static_cast<double>(degree[a] * degree[b]));
    neighbours_[fill[a]] = static_cast<std::uint32_t>(b);
    weights_[fill[a]++] = w;
    neighbours_[fill[b]] = static_cast<std::uint32_t>(a);
    weights_[fill[b]++] = w;
  }
}

void BipartiteGraph::propagate(const Matrix& in, Matrix& out) const {
  if (in.rows != num_nodes()) throw std::invalid_argument("propagate: row mismatch");
  out.rows = in.rows;
  out.cols = in.cols;
  out.data.assign(in.data.size(), 0.0);
  const std::size_t d = in.cols;
  for (std::size_t v = 0; v < num_nodes(); ++v) {
    double* dst = out.row(v);
    for (std::size_t e = offsets_[v]; e < offsets_[v + 1]; ++e) {
      const double w = weights_[e];
      const double* src = in.row(neighbours_[e]);
      for (std::size_t c = 0; c < d; ++c) dst[c] += w * src[c];
    }
  }
}

Matrix BipartiteGraph::dense() const {
  Matrix a(num_nodes(), num_nodes());
  for (std::size_t v = 0; v < num_nodes(); ++v)
    for (std::size_t e = offsets_[v]; e < offsets_[v + 1]; ++e) a(v, neighbours_[e]) = weights_[e];
  return a;
}

// ---------------------------------------------------------------------------

RecModel::RecModel(ModelFamily family, std::size_t num_users, std::size_t num_items,
                   const TrainConfig& cfg)
    : family_(family),
      cfg_(cfg),
      user_emb_(num_users, cfg.dim),
      item_emb_(num_items, cfg.dim) {
  cfg_.validate();
  if (family_ == ModelFamily::ncf) {
    const auto widths = ncf_layer_widths(cfg_.dim);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l)
      mlp_.push_back({Matrix(widths[l + 1], widths[l]), std::vector<double>(widths[l + 1], 0.0)});
  }
  if (family_ == ModelFamily::lightgcn) graph_ = BipartiteGraph(num_users, num_items, {});
  refresh();
}

RecModel RecModel::initialized(ModelFamily family, std::size_t num_users,
                               std::size_t num_items, const TrainConfig& cfg,
                               std::uint64_t seed) {
  RecModel m(family, num_users, num_items, cfg);
  const double s = cfg.init_scale;
  // Row-seeded so a row's init does not depend on vocabulary size.
  auto fill_rows = [&](Matrix& mat, std::uint64_t tag) {
    for (std::size_t r = 0; r < mat.rows; ++r) {
      Rng rng(derive_seed(seed, {tag, r}));
      double* p = mat.row(r);
      for (std::size_t c = 0; c < mat.cols; ++c) p[c] = rng.uniform(-s, s);
    }
  };
  fill_rows(m.user_emb_, salt("user"));
  fill_rows(m.item_emb_, salt("item"));
  for (std::size_t l = 0; l < m.mlp_.size(); ++l) {
    Matrix& w = m.mlp_[l].weight;
    const double bound = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
    Rng rng(derive_seed(seed, {salt("mlp"), l}));
    for (double& x : w.data) x = rng.uniform(-bound, bound);
  }
  m.refresh();
  return m;
}

void RecModel::set_graph(BipartiteGraph g) {
  if (g.num_nodes() != num_users() + num_items())
    throw std::invalid_argument("graph node count does not match vocabulary");
  graph_ = std::move(g);
  refresh();
}

void RecModel::refresh() {
  if (family_ != ModelFamily::lightgcn) {
    propagated_ = Matrix();
    return;
  }
  const std::size_t nu = num_users();
  Matrix layer(nu + num_items(), dim());
  std::copy(user_emb_.data.begin(), user_emb_.data.end(), layer.data.begin());
  std::copy(item_emb_.data.begin(), item_emb_.data.end(),
            layer.data.begin() + static_cast<std::ptrdiff_t>(nu * dim()));
  propagated_ = layer;
  Matrix next;
  for (int l = 0; l < cfg_.layers; ++l) {
    graph_.propagate(layer, next);
    std::swap(layer, next);
    for (std::size_t k = 0; k < layer.data.size(); ++k) propagated_.data[k] += layer.data[k];
  }
  const double inv = 1.0 / static_cast<double>(cfg_.layers + 1);
  for (double& x : propagated_.data) x *= inv;
}

void RecModel::check_ids(UserId user, ItemId item) const {
  if (user >= num_users())
    throw std::out_of_range("user id " + std::to_string(user) + " out of range");
  if (item >= num_items())
    throw std::out_of_range("item id " + std::to_string(item) + " out of range");
}

double RecModel::logit(UserId user, ItemId item) const {
  check_ids(user, item);
  const std::size_t d = dim();
  switch (family_) {
    case ModelFamily::mf_logit: {
      const double* u = user_emb_.row(user);
      const double* v = item_emb_.row(item);
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += u[c] * v[c];
      return s;
    }
    case ModelFamily::lightgcn: {
      const double* u = propagated_.row(user);
      const double* v = propagated_.row(num_users() + item);
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += u[c] * v[c];
      return s;
    }
    case ModelFamily::ncf: {
      std::vector<double> x(2 * d);
      std::copy_n(user_emb_.row(user), d, x.begin());
      std::copy_n(item_emb_.row(item), d, x.begin() + static_cast<std::ptrdiff_t>(d));
      for (std::size_t l = 0; l < mlp_.size(); ++l) {
        const DenseLayer& layer = mlp_[l];
        std::vector<double> y(layer.bias);
        for (std::size_t o = 0; o < layer.weight.rows; ++o) {
          const double* w = layer.weight.row(o);
          for (std::size_t i = 0; i < layer.weight.cols; ++i) y[o] += w[i] * x[i];
          if (l + 1 < mlp_.size()) y[o] = std::max(0.0, y[o]);
        }
        x = std::move(y);
      }
      return x[0];
    }
  }
  return 0;
}

double RecModel::predict(UserId user, ItemId item) const { return sigmoid(logit(user, item)); }

std::vector<ItemId> top_k(const RecModel& model, UserId user, std::span<const ItemId> candidates,
                          std::size_t k) {
  if (candidates.empty()) throw PreconditionError("top_k: empty candidate set");
  if (k == 0 || k > candidates.size())
    throw PreconditionError("top_k: k must be in [1, |candidates|]");
  std::vector<std::pair<double, ItemId>> scored;
  scored.reserve(candidates.size());
  for (ItemId i : candidates) scored.emplace_back(model.predict(user, i), i);
  auto better = [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    better);
  std::vector<ItemId> out(k);
  for (std::size_t j = 0; j < k; ++j) out[j] = scored[j].second;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'R', 'E', 'C', 'P', 'S', 'M', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void matrix(const Matrix& m) {
    u64(m.rows);
    u64(m.cols);
    for (double x : m.data) f64(x);
  }
  std::string take() { return std::move(out_); }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }

 private:
  void le(std::uint64_t v, int bytes) {
    for (int b = 0; b < bytes; ++b) out_.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Matrix matrix() {
    const std::uint64_t r = u64(), c = u64();
    if (c != 0 && r > (in_.size() - pos_) / 8 / c) throw FormatError("checkpoint: truncated tensor");
    Matrix m(r, c);
    for (double& x : m.data) x = f64();
    return m;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint: truncated");
  }
  std::uint64_t le(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int b = 0; b < bytes; ++b)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + b])) << (8 * b);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const RecModel& model) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(model.family()));
  const TrainConfig& c = model.config();
  w.f64(c.learning_rate);
  w.u64(c.batch_size);
  w.u64(static_cast<std::uint64_t>(c.max_epochs));
  w.u64(static_cast<std::uint64_t>(c.patience));
  w.u64(c.dim);
  w.u64(static_cast<std::uint64_t>(c.layers));
  w.u64(c.seed);
  w.u64(c.eval_k);
  w.f64(c.init_scale);
  w.u32(static_cast<std::uint32_t>(2 + 2 * model.mlp().size()));
  w.str("user_embeddings");
  w.matrix(model.user_embeddings());
  w.str("item_embeddings");
  w.matrix(model.item_embeddings());
  for (std::size_t l = 0; l < model.mlp().size(); ++l) {
    const auto& layer = model.mlp()[l];
    w.str("mlp." + std::to_string(l) + ".weight");
    w.matrix(layer.weight);
    Matrix b(layer.bias.size(), 1);
    b.data = layer.bias;
    w.str("mlp." + std::to_string(l) + ".bias");
    w.matrix(b);
  }
  const auto& edges = model.graph().edges();
  w.u64(edges.size());
  for (const auto& e : edges) {
    w.u32(e.user);
    w.u32(e.item);
  }
  return w.take();
}

RecModel deserialize_model(std::string_view bytes) {
  Reader r(bytes);
  if (r.raw(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic)))
    throw FormatError("checkpoint: bad magic");
  if (r.u32() != kVersion) throw FormatError("checkpoint: unsupported version");
  const std::uint32_t fam = r.u32();
  if (fam < 1 || fam > 3) throw FormatError("checkpoint: unknown family tag");
  TrainConfig c;
  c.learning_rate = r.f64();
  c.batch_size = r.u64();
  c.max_epochs = static_cast<int>(r.u64());
  c.patience = static_cast<int>(r.u64());
  c.dim = r.u64();
  c.layers = static_cast<int>(r.u64());
  c.seed = r.u64();
  c.eval_k = r.u64();
  c.init_scale = r.f64();
  const std::uint32_t tensors = r.u32();
  std::vector<std::pair<std::string, Matrix>> named;
  for (std::uint32_t t = 0; t < tensors; ++t) {
    std::string name = r.str();
    named.emplace_back(std::move(name), r.matrix());
  }
  if (named.size() < 2 || named[0].first != "user_embeddings" ||
      named[1].first != "item_embeddings")
    throw FormatError("checkpoint: missing embedding tensors");
  RecModel m(static_cast<ModelFamily>(fam), named[0].second.rows, named[1].second.rows, c);
  if (named[0].second.cols != c.dim || named[1].second.cols != c.dim)
    throw FormatError("checkpoint: embedding width mismatch");
  m.user_embeddings() = std::move(named[0].second);
  m.item_embeddings() = std::move(named[1].second);
  if (named.size() != 2 + 2 * m.mlp().size()) throw FormatError("checkpoint: wrong tensor count");
  for (std::size_t l = 0; l < m.mlp().size(); ++l) {
    auto& layer = m.mlp()[l];
    Matrix& wt = named[2 + 2 * l].second;
    Matrix& b = named[3 + 2 * l].second;
    if (wt.rows != layer.weight.rows || wt.cols != layer.weight.cols ||
        b.rows != layer.bias.size())
      throw FormatError("checkpoint: mlp shape mismatch");
    layer.weight = std::move(wt);
    layer.bias = std::move(b.data);
  }
  const std::uint64_t n_edges = r.u64();
  std::vector<InteractionKey> edges;
  for (std::uint64_t e = 0; e < n_edges; ++e) {
    const UserId u = r.u32();
    const ItemId i = r.u32();
    edges.push_back({u, i});
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  if (m.family() == ModelFamily::lightgcn)
    m.set_graph(BipartiteGraph(m.num_users(), m.num_items(), std::move(edges)));
  else
    m.refresh();
  return m;
}

void save_model(const RecModel& model, const std::filesystem::path& path) {
  write_file(path, serialize_model(model));
}

RecModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

}  // namespace recps
