#include "espec/worker_pool.hpp"

#include <cstdlib>
#include <string>

#include "espec/errors.hpp"

namespace espec {

WorkerPool::WorkerPool(int workers) {
    const int count = workers > 1 ? workers : 0;
    threads_.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        threads_.emplace_back([this] { worker_loop(); });
    }
}

WorkerPool::~WorkerPool() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
    }
    work_cv_.notify_all();
    for (auto& t : threads_) t.join();
}

void WorkerPool::run_tasks(std::span<const std::function<void()>> tasks) {
    if (tasks.empty()) return;

    if (threads_.empty()) {
        for (const auto& task : tasks) task();
        return;
    }

    {
        std::lock_guard lock(mutex_);
        tasks_ = tasks;
        next_task_ = 0;
        pending_ = tasks.size();
        first_error_ = nullptr;
    }
    work_cv_.notify_all();

    std::unique_lock lock(mutex_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    tasks_ = {};
    if (first_error_) {
        std::rethrow_exception(first_error_);
    }
}

void WorkerPool::worker_loop() {
    std::unique_lock lock(mutex_);
    for (;;) {
        work_cv_.wait(lock, [this] { return stopping_ || next_task_ < tasks_.size(); });
        if (stopping_) return;
        while (next_task_ < tasks_.size()) {
            const std::size_t index = next_task_++;
            lock.unlock();
            std::exception_ptr error;
            try {
                tasks_[index]();
            } catch (...) {
                error = std::current_exception();
            }
            lock.lock();
            if (error && !first_error_) first_error_ = error;
            if (--pending_ == 0) done_cv_.notify_all();
        }
    }
}

int resolve_worker_count(int requested, int fallback) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("ESPEC_WORKERS")) {
        try {
            const int parsed = std::stoi(env);
            if (parsed > 0) return parsed;
        } catch (const std::exception&) {
            throw ConfigError("ESPEC_WORKERS must be a positive integer");
        }
    }
    return fallback > 0 ? fallback : 1;
}

}  // namespace espec
