#include "lsattn/threads.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace lsattn {
namespace {

std::atomic<int> g_width{1};

// Lazily started pool; workers pull indices with fetch_add so a slow
// element does not stall the others. Writes inside fn are disjoint per
// index, which keeps results independent of scheduling.
class Pool {
 public:
  static Pool& instance() {
    static Pool p;
    return p;
  }

  void run(int n, int width, const std::function<void(int)>& fn) {
    std::unique_lock lock(job_mutex_);  // one job at a time
    ensure_workers(width - 1);
    {
      std::lock_guard lk(m_);
      fn_ = &fn;
      next_.store(0, std::memory_order_relaxed);
      limit_ = n;
      active_ = std::min(width - 1, static_cast<int>(workers_.size()));
      remaining_ = active_;
      ++epoch_;
    }
    cv_.notify_all();
    work();  // caller participates
    std::unique_lock lk(m_);
    done_cv_.wait(lk, [this] { return remaining_ == 0; });
    fn_ = nullptr;
  }

 private:
  Pool() = default;
  ~Pool() {
    {
      std::lock_guard lk(m_);
      stop_ = true;
      ++epoch_;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  void ensure_workers(int want) {
    while (static_cast<int>(workers_.size()) < want) {
      const int id = static_cast<int>(workers_.size());
      workers_.emplace_back([this, id] { worker_loop(id); });
    }
  }

  void worker_loop(int id) {
    uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock lk(m_);
        cv_.wait(lk, [&] { return stop_ || (epoch_ != seen && id < active_); });
        if (stop_) return;
        seen = epoch_;
      }
      work();
      {
        std::lock_guard lk(m_);
        if (--remaining_ == 0) done_cv_.notify_all();
      }
    }
  }

  void work() {
    for (;;) {
      const int i = next_.fetch_add(1, std::memory_order_relaxed);
      if (i >= limit_) return;
      (*fn_)(i);
    }
  }

  std::mutex job_mutex_;
  std::mutex m_;
  std::condition_variable cv_, done_cv_;
  std::vector<std::thread> workers_;
  const std::function<void(int)>* fn_ = nullptr;
  std::atomic<int> next_{0};
  int limit_ = 0;
  int active_ = 0;
  int remaining_ = 0;
  uint64_t epoch_ = 0;
  bool stop_ = false;
};

}  // namespace

int thread_width() { return g_width.load(std::memory_order_relaxed); }

void set_thread_width(int n) {
  g_width.store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  const int width = thread_width();
  if (n <= 1 || width <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  Pool::instance().run(n, std::min(width, n), fn);
}

}  // namespace lsattn
