#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

namespace espec {

// Small persistent thread pool for running one batch of independent tasks
// at a time. Tasks must write to disjoint outputs; callers rely on that for
// schedule-independent results. With workers <= 1 everything runs inline on
// the calling thread.
class WorkerPool {
public:
    explicit WorkerPool(int workers);
    ~WorkerPool();

    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    int worker_count() const { return static_cast<int>(threads_.size()); }

    // Blocks until every task has run. The first task exception, if any, is
    // rethrown on the calling thread after the batch drains.
    void run_tasks(std::span<const std::function<void()>> tasks);

private:
    void worker_loop();

    std::vector<std::thread> threads_;
    std::mutex mutex_;
    std::condition_variable work_cv_;
    std::condition_variable done_cv_;
    std::span<const std::function<void()>> tasks_;
    std::size_t next_task_ = 0;
    std::size_t pending_ = 0;
    std::exception_ptr first_error_;
    bool stopping_ = false;
};

// Resolves the effective worker count: explicit request, else the
// ESPEC_WORKERS environment variable, else the given default.
int resolve_worker_count(int requested, int fallback);

}  // namespace espec
