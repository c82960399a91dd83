#include "dcnas/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace dcnas {

namespace {

constexpr int kEvalChunk = 16;

Tensor frame_tensor(const Dataset& ds, std::span<const int> ids, int t) {
  const int h = ds.config.height, w = ds.config.width;
  const std::size_t plane = 3u * h * w;
  Tensor out(Shape{static_cast<int>(ids.size()), 3, h, w});
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto& src = ds.sequences.at(ids[k]).frames.at(t);
    for (std::size_t i = 0; i < plane; ++i) out[k * plane + i] = src[i] / 255.0;
  }
  return out;
}

std::vector<std::uint8_t> label_vector(const Dataset& ds, std::span<const int> ids, int t) {
  std::vector<std::uint8_t> out;
  for (int id : ids) {
    const auto& l = ds.sequences.at(id).labels.at(t);
    out.insert(out.end(), l.begin(), l.end());
  }
  return out;
}

Tensor take_rows(const Tensor& src, const std::vector<int>& rows) {
  std::vector<int> dims = src.shape().dims();
  const std::size_t row = src.numel() / static_cast<std::size_t>(dims[0]);
  dims[0] = static_cast<int>(rows.size());
  Tensor out{Shape(dims)};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::memcpy(out.data() + k * row, src.data() + static_cast<std::size_t>(rows[k]) * row, row * sizeof(double));
  }
  return out;
}

std::vector<std::uint8_t> take_label_rows(const std::vector<std::uint8_t>& src, std::size_t row,
                                          const std::vector<int>& rows) {
  std::vector<std::uint8_t> out;
  out.reserve(rows.size() * row);
  for (int r : rows) out.insert(out.end(), src.begin() + r * row, src.begin() + (r + 1) * row);
  return out;
}

void put_rows(Tensor& dst, const Tensor& src, std::size_t first_row) {
  const std::size_t row = dst.numel() / static_cast<std::size_t>(dst.dim(0));
  std::memcpy(dst.data() + first_row * row, src.data(), src.numel() * sizeof(double));
}

Tensor concat_n(const std::vector<Tensor>& parts) {
  std::vector<int> dims = parts.at(0).shape().dims();
  int n = 0;
  for (const auto& p : parts) n += p.dim(0);
  dims[0] = n;
  Tensor out{Shape(dims)};
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data() + off, p.data(), p.numel() * sizeof(double));
    off += p.numel();
  }
  return out;
}

void score(ConfusionMatrix& cm, Var pred, int h, int w, const std::vector<std::uint8_t>& labels) {
  cm.update(labels, argmax_channels(upsample_logits(pred, h, w).value()));
}

template <typename Fn>
void for_chunks(std::span<const int> ids, Fn fn) {
  for (std::size_t start = 0; start < ids.size(); start += kEvalChunk) {
    fn(ids.subspan(start, std::min<std::size_t>(kEvalChunk, ids.size() - start)));
  }
}

}  // namespace

MetricsReport evaluate_static(StaticNet& net, const Dataset& ds, std::span<const int> ids) {
  ConfusionMatrix cm(ds.config.num_classes);
  const int h = ds.config.height, w = ds.config.width;
  for_chunks(ids, [&](std::span<const int> chunk) {
    for (int t = 0; t < ds.config.seq_len; ++t) {
      Tape tape;
      Tensor x = frame_tensor(ds, chunk, t);
      score(cm, net.forward(tape.constant_ref(x)).pred, h, w, label_vector(ds, chunk, t));
    }
  });
  return evaluate(cm);
}

MetricsReport evaluate_majority(const Dataset& ds, std::span<const int> train_ids, std::span<const int> eval_ids,
                                int first_frame) {
  std::vector<std::uint64_t> counts(ds.config.num_classes, 0);
  for (int id : train_ids)
    for (const auto& l : ds.sequences.at(id).labels)
      for (auto v : l)
        if (v != kIgnoreLabel) ++counts[v];
  const auto majority = static_cast<std::uint8_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  ConfusionMatrix cm(ds.config.num_classes);
  for (int id : eval_ids) {
    const auto& seq = ds.sequences.at(id);
    for (std::size_t t = first_frame; t < seq.labels.size(); ++t) {
      cm.update(seq.labels[t], std::vector<std::uint8_t>(seq.labels[t].size(), majority));
    }
  }
  return evaluate(cm);
}

MetricsReport evaluate_copy_forward(StaticNet& net, const Dataset& ds, std::span<const int> ids) {
  ConfusionMatrix cm(ds.config.num_classes);
  const int h = ds.config.height, w = ds.config.width;
  for_chunks(ids, [&](std::span<const int> chunk) {
    Tape tape;
    Tensor x = frame_tensor(ds, chunk, 0);
    FrameVars first = net.forward(tape.constant_ref(x));
    for (int t = 1; t < ds.config.seq_len; ++t) score(cm, first.pred, h, w, label_vector(ds, chunk, t));
  });
  return evaluate(cm);
}

MetricsReport evaluate_dynamic(DynamicNet& net, const Dataset& ds, std::span<const int> ids) {
  ConfusionMatrix cm(ds.config.num_classes);
  const int h = ds.config.height, w = ds.config.width;
  for_chunks(ids, [&](std::span<const int> chunk) {
    Tape tape;
    std::vector<Tensor> xs;
    for (int t = 0; t < ds.config.seq_len; ++t) xs.push_back(frame_tensor(ds, chunk, t));
    FrameVars state = net.first(tape.constant_ref(xs[0]));
    for (int t = 1; t < ds.config.seq_len; ++t) {
      state = net.next(state, tape.constant_ref(xs[t]));
      score(cm, state.pred, h, w, label_vector(ds, chunk, t));
    }
  });
  return evaluate(cm);
}

PretrainResult pretrain_static(StaticNet& net, const Dataset& ds, std::span<const int> train_ids,
                               const PretrainConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw Error("pretrain: epochs must be >= 0 and batch_size >= 1");
  Sgd enc(net.encoder_parameters(), cfg.encoder_lr, cfg.momentum, cfg.weight_decay);
  Sgd dec(net.decoder_parameters(), cfg.decoder_lr, cfg.momentum, cfg.weight_decay);
  const long per_epoch = static_cast<long>((train_ids.size() + cfg.batch_size - 1) / cfg.batch_size);
  const long max_iter = per_epoch * cfg.epochs;
  PretrainResult res;
  for (int e = 0; e < cfg.epochs; ++e) {
    auto bs = batches(ds, train_ids, cfg.batch_size, cfg.augment, cfg.seed * 1000003ULL + e);
    for (const auto& b : bs) {
      Tensor x = concat_n(b.frames);
      std::vector<std::uint8_t> labels;
      for (const auto& l : b.labels) labels.insert(labels.end(), l.begin(), l.end());
      const int h = x.dim(2), w = x.dim(3);

      Tape tape;
      StaticNet::Features f = net.encode(tape.constant_ref(x));
      Var pred = net.classify(net.decode(f));
      Var loss = softmax_cross_entropy(upsample_logits(pred, h, w), labels);
      if (cfg.aux_weight != 0.0) {
        Var aux = softmax_cross_entropy(upsample_logits(net.aux_logits(f.layer3), h, w), labels);
        loss = add(loss, scale(aux, cfg.aux_weight));
      }
      enc.zero_grad();
      dec.zero_grad();
      tape.backward(loss);
      enc.set_lr(poly_lr(cfg.encoder_lr, res.steps, max_iter, cfg.poly_power));
      dec.set_lr(poly_lr(cfg.decoder_lr, res.steps, max_iter, cfg.poly_power));
      enc.step();
      dec.step();
      res.step_losses.push_back(loss.value()[0]);
      ++res.steps;
    }
  }
  return res;
}

BundleCache build_bundle_cache(StaticNet& net, const Dataset& ds, std::span<const int> ids, std::string split) {
  if (ids.empty()) throw Error("bundle cache: no sequences for split '" + split + "'");
  BundleCache c;
  c.split = std::move(split);
  c.static_checksum = net.checksum();
  c.ids.assign(ids.begin(), ids.end());
  c.seq_len = ds.config.seq_len;
  c.height = ds.config.height;
  c.width = ds.config.width;
  const int n = static_cast<int>(ids.size());
  c.layer2.resize(c.seq_len);
  c.layer3.resize(c.seq_len);
  c.layer4.resize(c.seq_len);
  for (int t = 0; t < c.seq_len; ++t) c.labels.push_back(label_vector(ds, ids, t));

  std::size_t row = 0;
  for_chunks(ids, [&](std::span<const int> chunk) {
    for (int t = 0; t < c.seq_len; ++t) {
      Tape tape;
      Tensor x = frame_tensor(ds, chunk, t);
      StaticNet::Features f = net.encode(tape.constant_ref(x));
      auto store = [&](Tensor& dst, const Tensor& v) {
        if (dst.numel() == 0) {
          std::vector<int> dims = v.shape().dims();
          dims[0] = n;
          dst = Tensor(Shape(dims));
        }
        put_rows(dst, v, row);
      };
      store(c.layer2[t], f.layer2.value());
      store(c.layer3[t], f.layer3.value());
      store(c.layer4[t], f.layer4.value());
      if (t == 0) store(c.dec0, net.decode(f).value());
    }
    row += chunk.size();
  });
  return c;
}

const BundleCache& BundleStore::get(StaticNet& net, const Dataset& ds, std::span<const int> ids,
                                    const std::string& split) {
  const auto key = std::make_pair(split, net.checksum());
  auto it = caches_.find(key);
  if (it != caches_.end() && std::equal(ids.begin(), ids.end(), it->second->ids.begin(), it->second->ids.end())) {
    return *it->second;
  }
  ++builds_;
  auto cache = std::make_unique<BundleCache>(build_bundle_cache(net, ds, ids, split));
  auto& slot = caches_[key];
  slot = std::move(cache);
  return *slot;
}

Var cached_sequence_loss(DynamicNet& net, Tape& tape, const BundleCache& cache, const std::vector<int>& rows) {
  const std::size_t plane = static_cast<std::size_t>(cache.height) * cache.width;
  const int h8 = cache.layer2[0].dim(2), w8 = cache.layer2[0].dim(3);
  Var dec_prev = tape.constant(take_rows(cache.dec0, rows));
  Var l4_prev = tape.constant(take_rows(cache.layer4[0], rows));
  std::optional<Var> total;
  for (int t = 1; t < cache.seq_len; ++t) {
    StaticNet::Features cur{tape.constant(take_rows(cache.layer2[t], rows)),
                            tape.constant(take_rows(cache.layer3[t], rows)),
                            tape.constant(take_rows(cache.layer4[t], rows))};
    FrameVars s = net.next_from_features(dec_prev, l4_prev, cur, h8, w8);
    Var l = softmax_cross_entropy(upsample_logits(s.pred, cache.height, cache.width),
                                  take_label_rows(cache.labels[t], plane, rows));
    total = total ? add(*total, l) : l;
    dec_prev = s.dec;
    l4_prev = cur.layer4;
  }
  return *total;
}

CellTrainer::CellTrainer(DynamicNet& net, const BundleCache& train, CellTrainConfig cfg)
    : net_(net), train_(train), cfg_(cfg), adam_(net.cell_parameters(), AdamConfig{.lr = cfg.lr}), rng_(cfg.seed) {
  if (cfg_.epochs < 0 || cfg_.batch_size < 1) throw Error("train_cell: epochs must be >= 0 and batch_size >= 1");
  if (train.seq_len < 2) throw Error("train_cell: sequences need at least two frames");
}

double CellTrainer::train_epochs(int n) {
  double last = 0.0;
  const int n_rows = static_cast<int>(train_.ids.size());
  for (int e = 0; e < n && epochs_done_ < cfg_.epochs; ++e) {
    std::vector<int> order(n_rows);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    double sum = 0.0;
    int count = 0;
    for (int start = 0; start < n_rows; start += cfg_.batch_size) {
      std::vector<int> rows(order.begin() + start, order.begin() + std::min(n_rows, start + cfg_.batch_size));
      Tape tape;
      Var loss = cached_sequence_loss(net_, tape, train_, rows);
      adam_.zero_grad();
      tape.backward(loss);
      adam_.step();
      sum += loss.value()[0];
      ++count;
    }
    last = sum / count;
    ++epochs_done_;
  }
  return last;
}

MetricsReport CellTrainer::evaluate(const BundleCache& eval) {
  ConfusionMatrix cm(net_.static_net().config().num_classes);
  const int n = static_cast<int>(eval.ids.size());
  const int h8 = eval.layer2[0].dim(2), w8 = eval.layer2[0].dim(3);
  const std::size_t plane = static_cast<std::size_t>(eval.height) * eval.width;
  for (int start = 0; start < n; start += kEvalChunk) {
    std::vector<int> rows;
    for (int r = start; r < std::min(n, start + kEvalChunk); ++r) rows.push_back(r);
    Tape tape;
    Var dec_prev = tape.constant(take_rows(eval.dec0, rows));
    Var l4_prev = tape.constant(take_rows(eval.layer4[0], rows));
    for (int t = 1; t < eval.seq_len; ++t) {
      StaticNet::Features cur{tape.constant(take_rows(eval.layer2[t], rows)),
                              tape.constant(take_rows(eval.layer3[t], rows)),
                              tape.constant(take_rows(eval.layer4[t], rows))};
      FrameVars s = net_.next_from_features(dec_prev, l4_prev, cur, h8, w8);
      score(cm, s.pred, eval.height, eval.width, take_label_rows(eval.labels[t], plane, rows));
      dec_prev = s.dec;
      l4_prev = cur.layer4;
    }
  }
  return dcnas::evaluate(cm);
}

CellTrainResult train_cell(DynamicNet& net, const BundleCache& train, const BundleCache& eval,
                           const CellTrainConfig& cfg, double stop_at_fraction) {
  if (!(stop_at_fraction > 0.0 && stop_at_fraction <= 1.0)) throw Error("train_cell: stop_at_fraction must be in (0,1]");
  CellTrainer trainer(net, train, cfg);
  trainer.train_epochs(static_cast<int>(std::ceil(cfg.epochs * stop_at_fraction)));
  return {trainer.epochs_done(), trainer.evaluate(eval)};
}

FinetuneResult finetune_end_to_end(DynamicNet& net, const Dataset& ds, std::span<const int> train_ids,
                                   const FinetuneConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch_size < 1) throw Error("finetune: epochs must be >= 0 and batch_size >= 1");
  StaticNet& st = net.static_net();
  for (Parameter* p : st.parameters()) p->set_trainable(true);
  Adam cell_opt(net.cell_parameters(), AdamConfig{.lr = cfg.cell_lr});
  Sgd static_opt(st.parameters(), cfg.static_lr, cfg.momentum);
  FinetuneResult res;
  for (int e = 0; e < cfg.epochs; ++e) {
    double sum = 0.0;
    int count = 0;
    for (const auto& b : batches(ds, train_ids, cfg.batch_size, cfg.augment, cfg.seed * 1000003ULL + e)) {
      Tape tape;
      std::vector<Var> frames;
      for (const auto& f : b.frames) frames.push_back(tape.constant_ref(f));
      Var loss = sequence_loss(net, frames, b.labels);
      cell_opt.zero_grad();
      static_opt.zero_grad();
      tape.backward(loss);
      cell_opt.step();
      static_opt.step();
      sum += loss.value()[0];
      ++count;
    }
    res.epoch_losses.push_back(sum / count);
  }
  return res;
}

}  // namespace dcnas
