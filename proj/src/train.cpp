#include "recps/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "recps/errors.hpp"
#include "recps/rng.hpp"

namespace recps {

namespace {

// BCE from the logit: softplus(s) - y*s.
double bce(double s, std::uint8_t y) {
  return std::max(s, 0.0) - (y ? s : 0.0) + std::log1p(std::exp(-std::abs(s)));
}

void add_scaled(double* dst, const double* src, double a, std::size_t n) {
  for (std::size_t c = 0; c < n; ++c) dst[c] += a * src[c];
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0;
  for (std::size_t c = 0; c < n; ++c) s += a[c] * b[c];
  return s;
}

void zero_rows(Matrix& m, std::span<const std::uint32_t> rows) {
  for (auto r : rows) std::fill_n(m.row(r), m.cols, 0.0);
}

// Forward/backward through the NCF tower for one example. Returns the logit;
// when `g` is non-zero accumulates g * d(logit)/d(params) into grads.
struct NcfScratch {
  std::vector<std::vector<double>> act;  // act[0] = input, act[l+1] = layer l output
  std::vector<std::vector<double>> delta;
};

double ncf_forward(const RecModel& model, UserId u, ItemId i, NcfScratch& s) {
  const std::size_t d = model.dim();
  const auto& mlp = model.mlp();
  s.act.resize(mlp.size() + 1);
  s.act[0].resize(2 * d);
  std::copy_n(model.user_embeddings().row(u), d, s.act[0].begin());
  std::copy_n(model.item_embeddings().row(i), d, s.act[0].begin() + static_cast<std::ptrdiff_t>(d));
  for (std::size_t l = 0; l < mlp.size(); ++l) {
    const DenseLayer& layer = mlp[l];
    auto& y = s.act[l + 1];
    y = layer.bias;
    for (std::size_t o = 0; o < layer.weight.rows; ++o) {
      y[o] += dot(layer.weight.row(o), s.act[l].data(), layer.weight.cols);
      if (l + 1 < mlp.size()) y[o] = std::max(0.0, y[o]);
    }
  }
  return s.act.back()[0];
}

void ncf_backward(const RecModel& model, UserId u, ItemId i, double g, NcfScratch& s,
                  Gradients& grads) {
  const std::size_t d = model.dim();
  const auto& mlp = model.mlp();
  s.delta.resize(mlp.size() + 1);
  s.delta[mlp.size()] = {g};
  for (std::size_t l = mlp.size(); l-- > 0;) {
    const DenseLayer& layer = mlp[l];
    auto& dy = s.delta[l + 1];
    if (l + 1 < mlp.size())
      for (std::size_t o = 0; o < dy.size(); ++o)
        if (s.act[l + 1][o] <= 0.0) dy[o] = 0.0;
    DenseLayer& gl = grads.mlp[l];
    auto& dx = s.delta[l];
    dx.assign(layer.weight.cols, 0.0);
    for (std::size_t o = 0; o < layer.weight.rows; ++o) {
      if (dy[o] == 0.0) continue;
      gl.bias[o] += dy[o];
      add_scaled(gl.weight.row(o), s.act[l].data(), dy[o], layer.weight.cols);
      add_scaled(dx.data(), layer.weight.row(o), dy[o], layer.weight.cols);
    }
  }
  add_scaled(grads.user.row(u), s.delta[0].data(), 1.0, d);
  add_scaled(grads.item.row(i), s.delta[0].data() + d, 1.0, d);
}

// Layer-mean propagated embeddings from layer-0 parameters.
Matrix lightgcn_forward(const RecModel& model) {
  const std::size_t nu = model.num_users();
  const std::size_t d = model.dim();
  Matrix layer(nu + model.num_items(), d);
  std::copy(model.user_embeddings().data.begin(), model.user_embeddings().data.end(),
            layer.data.begin());
  std::copy(model.item_embeddings().data.begin(), model.item_embeddings().data.end(),
            layer.data.begin() + static_cast<std::ptrdiff_t>(nu * d));
  Matrix total = layer, next;
  for (int l = 0; l < model.config().layers; ++l) {
    model.graph().propagate(layer, next);
    std::swap(layer, next);
    for (std::size_t k = 0; k < layer.data.size(); ++k) total.data[k] += layer.data[k];
  }
  const double inv = 1.0 / static_cast<double>(model.config().layers + 1);
  for (double& x : total.data) x *= inv;
  return total;
}

}  // namespace

Gradients::Gradients(const RecModel& model)
    : user(model.num_users(), model.dim()),
      item(model.num_items(), model.dim()),
      dense(model.family() == ModelFamily::lightgcn) {
  for (const auto& layer : model.mlp())
    mlp.push_back({Matrix(layer.weight.rows, layer.weight.cols),
                   std::vector<double>(layer.bias.size(), 0.0)});
}

void Gradients::clear() {
  if (dense) {
    std::fill(user.data.begin(), user.data.end(), 0.0);
    std::fill(item.data.begin(), item.data.end(), 0.0);
  } else {
    zero_rows(user, touched_users);
    zero_rows(item, touched_items);
  }
  touched_users.clear();
  touched_items.clear();
  for (auto& layer : mlp) {
    std::fill(layer.weight.data.begin(), layer.weight.data.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
}

double loss_and_gradient(const RecModel& model, std::span<const LabeledExample> batch,
                         Gradients& grads) {
  grads.clear();
  if (batch.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const std::size_t d = model.dim();
  for (const auto& ex : batch) {
    if (ex.user >= model.num_users() || ex.item >= model.num_items())
      throw std::out_of_range("training example outside model vocabulary");
    grads.touched_users.push_back(ex.user);
    grads.touched_items.push_back(ex.item);
  }
  double loss = 0;
  switch (model.family()) {
    case ModelFamily::mf_logit: {
      for (const auto& ex : batch) {
        const double* u = model.user_embeddings().row(ex.user);
        const double* v = model.item_embeddings().row(ex.item);
        const double s = dot(u, v, d);
        loss += bce(s, ex.label);
        const double g = (sigmoid(s) - ex.label) * inv_n;
        add_scaled(grads.user.row(ex.user), v, g, d);
        add_scaled(grads.item.row(ex.item), u, g, d);
      }
      break;
    }
    case ModelFamily::ncf: {
      NcfScratch scratch;
      for (const auto& ex : batch) {
        const double s = ncf_forward(model, ex.user, ex.item, scratch);
        loss += bce(s, ex.label);
        ncf_backward(model, ex.user, ex.item, (sigmoid(s) - ex.label) * inv_n, scratch, grads);
      }
      break;
    }
    case ModelFamily::lightgcn: {
      const std::size_t nu = model.num_users();
      const Matrix final_emb = lightgcn_forward(model);
      Matrix g_final(final_emb.rows, d);
      for (const auto& ex : batch) {
        const double* eu = final_emb.row(ex.user);
        const double* ei = final_emb.row(nu + ex.item);
        const double s = dot(eu, ei, d);
        loss += bce(s, ex.label);
        const double g = (sigmoid(s) - ex.label) * inv_n;
        add_scaled(g_final.row(ex.user), ei, g, d);
        add_scaled(g_final.row(nu + ex.item), eu, g, d);
      }
      // Â is symmetric, so d/dE0 = (1/(L+1)) * sum_l Â^l G.
      Matrix acc = g_final, cur = g_final, next;
      for (int l = 0; l < model.config().layers; ++l) {
        model.graph().propagate(cur, next);
        std::swap(cur, next);
        for (std::size_t k = 0; k < acc.data.size(); ++k) acc.data[k] += cur.data[k];
      }
      const double inv = 1.0 / static_cast<double>(model.config().layers + 1);
      for (std::size_t k = 0; k < nu * d; ++k) grads.user.data[k] = acc.data[k] * inv;
      for (std::size_t k = 0; k < grads.item.data.size(); ++k)
        grads.item.data[k] = acc.data[nu * d + k] * inv;
      break;
    }
  }
  return loss * inv_n;
}

double mean_loss(const RecModel& model, std::span<const LabeledExample> examples) {
  if (examples.empty()) return 0.0;
  double loss = 0;
  for (const auto& ex : examples) loss += bce(model.logit(ex.user, ex.item), ex.label);
  return loss / static_cast<double>(examples.size());
}

namespace {

void apply_sgd(RecModel& model, const Gradients& g, double lr) {
  const std::size_t d = model.dim();
  if (g.dense) {
    add_scaled(model.user_embeddings().data.data(), g.user.data.data(), -lr, g.user.data.size());
    add_scaled(model.item_embeddings().data.data(), g.item.data.data(), -lr, g.item.data.size());
  } else {
    // Rows may be listed more than once; subtract each distinct row once.
    std::vector<UserId> users(g.touched_users);
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());
    for (UserId u : users) add_scaled(model.user_embeddings().row(u), g.user.row(u), -lr, d);
    std::vector<ItemId> items(g.touched_items);
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    for (ItemId i : items) add_scaled(model.item_embeddings().row(i), g.item.row(i), -lr, d);
  }
  for (std::size_t l = 0; l < model.mlp().size(); ++l) {
    auto& layer = model.mlp()[l];
    add_scaled(layer.weight.data.data(), g.mlp[l].weight.data.data(), -lr, layer.weight.data.size());
    add_scaled(layer.bias.data(), g.mlp[l].bias.data(), -lr, layer.bias.size());
  }
}

struct ValidationSet {
  std::vector<UserId> users;
  std::vector<ItemId> targets;
  std::vector<std::vector<ItemId>> candidates;
};

ValidationSet build_validation(const InteractionDataset& ds,
                               std::span<const LabeledExample> examples,
                               std::size_t num_items) {
  ValidationSet vs;
  if (!ds.has_splits()) return vs;
  std::vector<std::vector<ItemId>> seen(ds.num_users());
  for (const auto& ex : examples)
    if (ex.label && ex.user < seen.size()) seen[ex.user].push_back(ex.item);
  for (std::size_t r : ds.rows_with_split(Split::validation)) {
    const auto k = ds.key(r);
    if (seen[k.user].empty()) continue;
    std::vector<std::uint8_t> blocked(num_items, 0);
    for (ItemId i : seen[k.user]) blocked[i] = 1;
    blocked[k.item] = 0;
    std::vector<ItemId> cand;
    for (ItemId i = 0; i < num_items; ++i)
      if (!blocked[i]) cand.push_back(i);
    vs.users.push_back(k.user);
    vs.targets.push_back(k.item);
    vs.candidates.push_back(std::move(cand));
  }
  return vs;
}

double validation_hit_rate(const RecModel& model, const ValidationSet& vs, std::size_t k) {
  if (vs.users.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t j = 0; j < vs.users.size(); ++j) {
    const double pt = model.predict(vs.users[j], vs.targets[j]);
    std::size_t rank = 0;
    for (ItemId c : vs.candidates[j]) {
      if (c == vs.targets[j]) continue;
      const double pc = model.predict(vs.users[j], c);
      if (pc > pt || (pc == pt && c < vs.targets[j])) ++rank;
    }
    hits += rank < k;
  }
  return static_cast<double>(hits) / static_cast<double>(vs.users.size());
}

}  // namespace

TrainResult train_with_history(ModelFamily family, const InteractionDataset& ds,
                               std::span<const LabeledExample> examples, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t nu = ds.num_users(), ni = ds.num_items();
  for (const auto& ex : examples)
    if (ex.user >= nu || ex.item >= ni)
      throw PreconditionError("training example references an id outside the vocabulary");

  TrainResult result{RecModel::initialized(family, nu, ni, cfg, derive_seed(cfg.seed, {salt("init")})),
                     {}, {}, 0, 0};
  RecModel& model = result.model;
  if (family == ModelFamily::lightgcn) {
    std::vector<InteractionKey> edges;
    for (const auto& ex : examples)
      if (ex.label) edges.push_back({ex.user, ex.item});
    model.set_graph(BipartiteGraph(nu, ni, std::move(edges)));
  }

  const bool early_stop = cfg.patience > 0;
  const ValidationSet vs = early_stop ? build_validation(ds, examples, ni) : ValidationSet{};
  RecModel best = model;
  double best_hr = -1.0;
  int stall = 0;

  std::vector<std::size_t> order(examples.size());
  std::vector<std::uint64_t> keys(examples.size());
  Gradients grads(model);
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, {salt("order"), static_cast<std::uint64_t>(epoch)});
    for (std::size_t k = 0; k < examples.size(); ++k) {
      const auto& ex = examples[k];
      keys[k] = derive_seed(epoch_seed, {pack({ex.user, ex.item}), ex.label});
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return keys[a] < keys[b] || (keys[a] == keys[b] && a < b);
    });

    double loss_sum = 0;
    std::vector<LabeledExample> batch;
    batch.reserve(cfg.batch_size);
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t k = start; k < end; ++k) batch.push_back(examples[order[k]]);
      const double loss = loss_and_gradient(model, batch, grads);
      if (!std::isfinite(loss)) throw DivergenceError(epoch, batch_no);
      apply_sgd(model, grads, cfg.learning_rate);
      loss_sum += loss * static_cast<double>(batch.size());
      ++batch_no;
    }
    result.epoch_loss.push_back(examples.empty() ? 0.0
                                                 : loss_sum / static_cast<double>(examples.size()));
    result.epochs_run = epoch;
    if (!early_stop) continue;
    model.refresh();
    const double hr = validation_hit_rate(model, vs, cfg.eval_k);
    result.validation_hr.push_back(hr);
    if (hr >= best_hr) {
      stall = hr > best_hr ? 0 : stall + 1;
      best_hr = hr;
      best = model;
      result.best_epoch = epoch;
    } else {
      ++stall;
    }
    if (stall >= cfg.patience) break;
  }
  if (early_stop) {
    model = std::move(best);
  } else {
    result.best_epoch = result.epochs_run;
  }
  model.refresh();
  return result;
}

RecModel train(ModelFamily family, const InteractionDataset& ds,
               std::span<const LabeledExample> examples, const TrainConfig& cfg) {
  return train_with_history(family, ds, examples, cfg).model;
}

}  // namespace recps
