#include "semicon/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace semicon {
namespace {

constexpr std::size_t kInlineWork = 1 << 15;

std::size_t env_workers() {
  std::size_t n = 0;
  if (const char* env = std::getenv("SEMICON_THREADS")) {
    try {
      n = static_cast<std::size_t>(std::stoul(env));
    } catch (...) {
      n = 0;
    }
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

class Pool {
 public:
  explicit Pool(std::size_t workers) {
    for (std::size_t i = 1; i < workers; ++i) {
      threads_.emplace_back([this, i] { loop(i); });
    }
  }

  ~Pool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    wake_.notify_all();
    for (auto& t : threads_) t.join();
  }

  std::size_t size() const { return threads_.size() + 1; }

  void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    std::unique_lock call_lock(call_mu_);
    const std::size_t parts = std::min(size(), n);
    {
      std::lock_guard lock(mu_);
      body_ = &body;
      n_ = n;
      parts_ = parts;
      pending_ = parts - 1;
      ++generation_;
    }
    wake_.notify_all();
    chunk(0);
    std::unique_lock lock(mu_);
    done_.wait(lock, [this] { return pending_ == 0; });
    body_ = nullptr;
  }

 private:
  void chunk(std::size_t part) {
    const std::size_t begin = n_ * part / parts_;
    const std::size_t end = n_ * (part + 1) / parts_;
    if (begin < end) (*body_)(begin, end);
  }

  void loop(std::size_t index) {
    std::size_t seen = 0;
    for (;;) {
      std::unique_lock lock(mu_);
      wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      if (index >= parts_) continue;
      lock.unlock();
      chunk(index);
      lock.lock();
      if (--pending_ == 0) done_.notify_one();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex call_mu_;
  std::mutex mu_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(std::size_t, std::size_t)>* body_ = nullptr;
  std::size_t n_ = 0;
  std::size_t parts_ = 1;
  std::size_t pending_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
};

std::mutex g_pool_mu;
std::size_t g_workers = 0;
std::unique_ptr<Pool> g_pool;

Pool* pool() {
  std::lock_guard lock(g_pool_mu);
  if (g_workers == 0) g_workers = env_workers();
  if (g_workers <= 1) return nullptr;
  if (!g_pool || g_pool->size() != g_workers) g_pool = std::make_unique<Pool>(g_workers);
  return g_pool.get();
}

thread_local bool t_inside = false;

}  // namespace

std::size_t worker_count() {
  std::lock_guard lock(g_pool_mu);
  if (g_workers == 0) g_workers = env_workers();
  return g_workers;
}

void set_worker_count(std::size_t n) {
  std::lock_guard lock(g_pool_mu);
  g_workers = n == 0 ? env_workers() : n;
  g_pool.reset();
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t cost_hint) {
  if (n == 0) return;
  Pool* p = (t_inside || n < 2 || n * cost_hint < kInlineWork) ? nullptr : pool();
  if (!p) {
    body(0, n);
    return;
  }
  t_inside = true;
  try {
    p->run(n, [&](std::size_t b, std::size_t e) {
      const bool prev = t_inside;
      t_inside = true;
      body(b, e);
      t_inside = prev;
    });
  } catch (...) {
    t_inside = false;
    throw;
  }
  t_inside = false;
}

}  // namespace semicon
