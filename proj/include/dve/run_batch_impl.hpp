#pragma once

#include <algorithm>
#include <atomic>
#include <thread>

namespace dve::coct {

template <typename Record, typename Fn>
BatchOutcome<Record> run_batch(const std::vector<Sample>& samples, int concurrency, Fn fn,
                               std::atomic<bool>* cancel) {
  BatchOutcome<Record> outcome;
  std::vector<std::optional<Record>> slots(samples.size());
  std::vector<std::optional<SampleFailure>> failures(samples.size());

  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      if (cancel && cancel->load()) break;
      const size_t i = next.fetch_add(1);
      if (i >= samples.size()) break;
      try {
        slots[i] = fn(samples[i]);
      } catch (const std::exception& ex) {
        failures[i] = SampleFailure{samples[i].id, ex.what()};
      }
    }
  };

  const int threads =
      std::max(1, std::min<int>(concurrency, static_cast<int>(samples.size())));
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (size_t i = 0; i < samples.size(); ++i) {
    if (slots[i]) outcome.records.push_back(std::move(*slots[i]));
    if (failures[i]) outcome.failures.push_back(std::move(*failures[i]));
  }
  std::sort(outcome.records.begin(), outcome.records.end(),
            [](const Record& a, const Record& b) { return a.sample_id < b.sample_id; });
  std::sort(outcome.failures.begin(), outcome.failures.end(),
            [](const SampleFailure& a, const SampleFailure& b) {
              return a.sample_id < b.sample_id;
            });
  outcome.interrupted = cancel && cancel->load();
  return outcome;
}

}  // namespace dve::coct
