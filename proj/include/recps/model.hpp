#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "recps/dataset.hpp"

namespace recps {

enum class ModelFamily : std::uint32_t { mf_logit = 1, ncf = 2, lightgcn = 3 };

std::string_view to_string(ModelFamily f);
ModelFamily parse_model_family(std::string_view name);

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 256;
  int max_epochs = 30;
  int patience = 5;  // 0 disables early stopping
  std::size_t dim = 64;
  int layers = 3;  // lightgcn propagation depth
  std::uint64_t seed = 0;
  std::size_t eval_k = 100;  // validation HR@k used for early stopping
  double init_scale = 0.05;  // embeddings ~ uniform(-init_scale, init_scale)

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// y = W x + b with W of shape (out, in).
struct DenseLayer {
  Matrix weight;
  std::vector<double> bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Symmetric-normalized adjacency D^-1/2 A D^-1/2 of the user-item
/// bipartite graph. Nodes 0..U-1 are users, U..U+I-1 items.
class BipartiteGraph {
 public:
  BipartiteGraph() = default;
  BipartiteGraph(std::size_t num_users, std::size_t num_items,
                 std::vector<InteractionKey> edges);

  std::size_t num_nodes() const noexcept { return num_users_ + num_items_; }
  const std::vector<InteractionKey>& edges() const noexcept { return edges_; }

  /// out = Â in. `out` is resized; `in` must have num_nodes() rows.
  void propagate(const Matrix& in, Matrix& out) const;

  /// Dense Â (for small graphs and tests).
  Matrix dense() const;

  friend bool operator==(const BipartiteGraph& a, const BipartiteGraph& b) {
    return a.num_users_ == b.num_users_ && a.num_items_ == b.num_items_ &&
           a.edges_ == b.edges_;
  }

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::vector<InteractionKey> edges_;  // unique, sorted
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> neighbours_;
  std::vector<double> weights_;
};

/// A trained (or initialized) interaction-probability model.
class RecModel {
 public:
  RecModel() = default;

  /// All-zero parameters of the right shapes.
  RecModel(ModelFamily family, std::size_t num_users, std::size_t num_items,
           const TrainConfig& cfg);

  /// Seeded init: embeddings uniform(-s, s); MLP weights Glorot-uniform,
  /// biases zero.
  static RecModel initialized(ModelFamily family, std::size_t num_users,
                              std::size_t num_items, const TrainConfig& cfg,
                              std::uint64_t seed);

  ModelFamily family() const noexcept { return family_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  std::size_t dim() const noexcept { return cfg_.dim; }
  std::size_t num_users() const noexcept { return user_emb_.rows; }
  std::size_t num_items() const noexcept { return item_emb_.rows; }

  Matrix& user_embeddings() noexcept { return user_emb_; }
  const Matrix& user_embeddings() const noexcept { return user_emb_; }
  Matrix& item_embeddings() noexcept { return item_emb_; }
  const Matrix& item_embeddings() const noexcept { return item_emb_; }
  std::vector<DenseLayer>& mlp() noexcept { return mlp_; }
  const std::vector<DenseLayer>& mlp() const noexcept { return mlp_; }

  const BipartiteGraph& graph() const noexcept { return graph_; }
  void set_graph(BipartiteGraph g);

  /// Recomputes the layer-mean propagated embeddings used by lightgcn
  /// prediction. Must be called after parameters change.
  void refresh();

  /// Layer-mean propagated embeddings, (U+I) x dim (lightgcn only).
  const Matrix& propagated() const noexcept { return propagated_; }

  /// Pre-sigmoid score. Throws std::out_of_range for bad ids.
  double logit(UserId user, ItemId item) const;

  /// Interaction probability in [0, 1].
  double predict(UserId user, ItemId item) const;

  friend bool operator==(const RecModel& a, const RecModel& b) {
    return a.family_ == b.family_ && a.cfg_ == b.cfg_ && a.user_emb_ == b.user_emb_ &&
           a.item_emb_ == b.item_emb_ && a.mlp_ == b.mlp_ && a.graph_ == b.graph_;
  }

 private:
  void check_ids(UserId user, ItemId item) const;

  ModelFamily family_ = ModelFamily::mf_logit;
  TrainConfig cfg_;
  Matrix user_emb_;
  Matrix item_emb_;
  std::vector<DenseLayer> mlp_;
  BipartiteGraph graph_;
  Matrix propagated_;
};

/// NCF tower widths [2*dim, dim, dim/2, 1].
std::vector<std::size_t> ncf_layer_widths(std::size_t dim);

double sigmoid(double x) noexcept;

/// Items of `candidates` ordered by descending predicted probability, ties
/// by ascending item id, truncated to k.
std::vector<ItemId> top_k(const RecModel& model, UserId user,
                          std::span<const ItemId> candidates, std::size_t k);

/// Versioned little-endian binary checkpoint. Byte-stable for equal models.
std::string serialize_model(const RecModel& model);
RecModel deserialize_model(std::string_view bytes);
void save_model(const RecModel& model, const std::filesystem::path& path);
RecModel load_model(const std::filesystem::path& path);

}  // namespace recps
