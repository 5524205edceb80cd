#include "infer/inference.hpp"

#include <cmath>
#include <thread>

#include "core/error.hpp"

namespace rfe {

const Tensor& RectificationTrace::at_task(int t) const {
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i] == t) return features[i];
  }
  throw InvalidArgument("trace holds no entry for task " + std::to_string(t));
}

RectificationTrace rectify_chain(const ContinualModel& model, const Tensor& x, int to_task) {
  int n = model.tasks_learned;
  if (to_task < 1 || to_task > n) {
    throw InvalidArgument("target task " + std::to_string(to_task) + " out of range 1.." +
                          std::to_string(n));
  }
  RectificationTrace trace;
  Tape tape(false);
  Value f = model.extract(tape, x);
  trace.features.push_back(tape.value(f));
  trace.tasks.push_back(n);
  std::vector<const Tensor*> xs = {&x};
  for (int k = n; k > to_task; --k) {
    f = model.retrospector(k).rectify(tape, f, xs);
    model.rectify_calls.fetch_add(1, std::memory_order_relaxed);
    trace.features.push_back(tape.value(f));
    trace.tasks.push_back(k - 1);
  }
  return trace;
}

namespace {

std::size_t argmax_lowest(const Tensor& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::vector<double> softmax(const Tensor& logits) {
  double mx = logits[0];
  for (double v : logits.data) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace

TilPrediction til_predict(const ContinualModel& model, const Tensor& x, int task_id,
                          bool use_rectification) {
  if (!model.has_head(task_id)) {
    throw InvalidArgument("no classifier head for task " + std::to_string(task_id));
  }
  Tensor feature;
  if (use_rectification) {
    feature = rectify_chain(model, x, task_id).features.back();
  } else {
    Tape tape(false);
    feature = tape.value(model.extract(tape, x));
  }
  Tape tape(false);
  Value logits = model.classify(tape, tape.constant(feature), task_id);
  TilPrediction out;
  out.logits = tape.value(logits);
  out.label_local = argmax_lowest(out.logits);
  return out;
}

CilPrediction cil_predict(const ContinualModel& model, const Tensor& x, bool use_rectification) {
  int n = model.tasks_learned;
  if (n < 1) throw InvalidArgument("cil_predict requires at least one learned task");

  std::size_t total = 0;
  for (const Affine& h : model.heads) total += h.out_dim();
  CilPrediction out;
  out.probabilities = Tensor({total});

  RectificationTrace trace;
  if (use_rectification) trace = rectify_chain(model, x, 1);

  Tensor raw;
  if (!use_rectification) {
    Tape tape(false);
    raw = tape.value(model.extract(tape, x));
  }

  std::size_t offset = 0;
  for (int t = 1; t <= n; ++t) {
    const Tensor& feature = use_rectification ? trace.at_task(t) : raw;
    Tape tape(false);
    Tensor logits = tape.value(model.classify(tape, tape.constant(feature), t));
    std::vector<double> p = softmax(logits);
    for (std::size_t i = 0; i < p.size(); ++i) out.probabilities[offset + i] += p[i];
    offset += p.size();
  }
  for (double& v : out.probabilities.data) v /= static_cast<double>(n);
  out.slot = argmax_lowest(out.probabilities);
  return out;
}

namespace {

int eval_thread_count(int requested, std::size_t n_samples) {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  int cap = requested > 0 ? requested : std::max(1, hw);
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cap),
                                                std::max<std::size_t>(1, n_samples)));
}

void parallel_over(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t chunk = (n + threads - 1) / static_cast<std::size_t>(threads);
  for (int w = 0; w < threads; ++w) {
    std::size_t begin = static_cast<std::size_t>(w) * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([begin, end, &fn] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (std::thread& th : pool) th.join();
}

}  // namespace

EvalOutput evaluate(const ContinualModel& model, const TaskStream& stream, int upto_task,
                    const EvalSettings& settings) {
  if (upto_task < 1 || upto_task > model.tasks_learned || upto_task > stream.num_tasks()) {
    throw InvalidArgument("evaluate: upto_task " + std::to_string(upto_task) + " out of range");
  }
  EvalOutput out;
  for (int t = 1; t <= upto_task; ++t) {
    const TaskDataset& ds = stream.task(t);
    std::size_t n = ds.test_x.size();
    int threads = eval_thread_count(settings.threads, n);

    if (settings.til) {
      std::vector<std::size_t> pred(n);
      parallel_over(n, threads, [&](std::size_t i) {
        pred[i] = til_predict(model, ds.test_x[i], t, settings.use_rectification).label_local;
      });
      std::size_t correct = 0;
      for (std::size_t i = 0; i < n; ++i) {
        std::int64_t pred_label = ds.classes[pred[i]];
        correct += pred_label == ds.test_y[i];
        out.records.push_back({"TIL", t, i, ds.test_y[i], pred_label});
      }
      out.til_accuracy.push_back(n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0);
    }

    if (settings.cil) {
      std::vector<std::size_t> slots(n);
      std::vector<Tensor> probs(n);
      parallel_over(n, threads, [&](std::size_t i) {
        CilPrediction p = cil_predict(model, ds.test_x[i], settings.use_rectification);
        slots[i] = p.slot;
        probs[i] = std::move(p.probabilities);
      });
      std::size_t correct = 0;
      for (std::size_t i = 0; i < n; ++i) {
        std::int64_t pred_label = stream.label_of_slot(slots[i]);
        correct += pred_label == ds.test_y[i];
        out.records.push_back({"CIL", t, i, ds.test_y[i], pred_label});
        out.cil_probabilities.push_back(std::move(probs[i]));
      }
      out.cil_accuracy.push_back(n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0);
    }
  }
  return out;
}

}  // namespace rfe
