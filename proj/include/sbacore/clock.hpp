#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <queue>
#include <unordered_set>
#include <vector>

#include "sbacore/model.hpp"

namespace sbacore {

using TaskId = std::uint64_t;

class Executor {
public:
    using Task = std::function<void()>;

    virtual ~Executor() = default;
    virtual Micros now() const = 0;
    virtual TaskId schedule_at(Micros at, Task task) = 0;
    virtual void cancel(TaskId id) = 0;

    TaskId schedule_after(Micros delay, Task task) { return schedule_at(now() + delay, std::move(task)); }
    // Thread-safe; runs the task on the scheduling thread as soon as possible.
    TaskId post(Task task) { return schedule_at(now(), std::move(task)); }
};

enum class ClockMode : std::uint8_t { Virtual, Wall };

std::string_view to_string(ClockMode mode);
ClockMode clock_mode_from_string(std::string_view name);

// Single-threaded event loop. Ties at the same instant run in scheduling order.
class Scheduler : public Executor {
public:
    explicit Scheduler(ClockMode mode = ClockMode::Virtual);

    ClockMode mode() const { return mode_; }
    Micros now() const override;
    TaskId schedule_at(Micros at, Task task) override;
    void cancel(TaskId id) override;

    // Runs tasks due at or before `end`; the clock finishes at `end`.
    void run_until(Micros end, const std::function<bool()>& stop = {});
    // Virtual only: runs until nothing is scheduled.
    void run_until_idle(Micros limit = Micros::max());
    std::size_t pending() const;
    std::uint64_t executed() const { return executed_; }

private:
    struct Item {
        Micros at;
        TaskId id;
        Task fn;
    };
    struct Later {
        bool operator()(const Item& a, const Item& b) const {
            if (a.at != b.at) return a.at > b.at;
            return a.id > b.id;
        }
    };

    bool pop_due(Micros limit, Item& out);
    Micros wall_elapsed() const;

    ClockMode mode_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::priority_queue<Item, std::vector<Item>, Later> queue_;
    std::unordered_set<TaskId> cancelled_;
    TaskId next_id_ = 1;
    Micros now_{0};
    std::chrono::steady_clock::time_point wall_start_;
    std::uint64_t executed_ = 0;
};

}  // namespace sbacore
