#include "sbacore/clock.hpp"

#include <stdexcept>
#include <string>

namespace sbacore {

std::string_view to_string(ClockMode mode) { return mode == ClockMode::Virtual ? "virtual" : "wall"; }

ClockMode clock_mode_from_string(std::string_view name) {
    if (name == "virtual") return ClockMode::Virtual;
    if (name == "wall") return ClockMode::Wall;
    throw std::invalid_argument("unknown clock mode: " + std::string(name));
}

Scheduler::Scheduler(ClockMode mode) : mode_(mode), wall_start_(std::chrono::steady_clock::now()) {}

Micros Scheduler::wall_elapsed() const {
    return std::chrono::duration_cast<Micros>(std::chrono::steady_clock::now() - wall_start_);
}

Micros Scheduler::now() const {
    if (mode_ == ClockMode::Wall) return wall_elapsed();
    std::lock_guard lock(mu_);
    return now_;
}

TaskId Scheduler::schedule_at(Micros at, Task task) {
    TaskId id;
    {
        std::lock_guard lock(mu_);
        if (mode_ == ClockMode::Virtual && at < now_) at = now_;
        id = next_id_++;
        queue_.push(Item{at, id, std::move(task)});
    }
    if (mode_ == ClockMode::Wall) cv_.notify_one();
    return id;
}

void Scheduler::cancel(TaskId id) {
    std::lock_guard lock(mu_);
    cancelled_.insert(id);
}

std::size_t Scheduler::pending() const {
    std::lock_guard lock(mu_);
    return queue_.size();
}

bool Scheduler::pop_due(Micros limit, Item& out) {
    std::unique_lock lock(mu_);
    for (;;) {
        while (!queue_.empty() && cancelled_.count(queue_.top().id) != 0) {
            cancelled_.erase(queue_.top().id);
            queue_.pop();
        }
        if (mode_ == ClockMode::Virtual) {
            if (queue_.empty() || queue_.top().at > limit) return false;
            out = std::move(const_cast<Item&>(queue_.top()));
            queue_.pop();
            now_ = out.at;
            return true;
        }
        Micros now = wall_elapsed();
        if (!queue_.empty() && queue_.top().at <= now) {
            out = std::move(const_cast<Item&>(queue_.top()));
            queue_.pop();
            return true;
        }
        if (now >= limit) return false;
        Micros wake = limit;
        if (!queue_.empty() && queue_.top().at < wake) wake = queue_.top().at;
        cv_.wait_for(lock, std::min<Micros>(wake - now, std::chrono::milliseconds(50)));
    }
}

void Scheduler::run_until(Micros end, const std::function<bool()>& stop) {
    Item item;
    while (!(stop && stop()) && pop_due(end, item)) {
        item.fn();
        ++executed_;
    }
    if (mode_ == ClockMode::Virtual) {
        std::lock_guard lock(mu_);
        if (now_ < end && !(stop && stop())) now_ = end;
    }
}

void Scheduler::run_until_idle(Micros limit) {
    if (mode_ != ClockMode::Virtual) throw std::logic_error("run_until_idle needs virtual time");
    Item item;
    while (pop_due(limit, item)) {
        item.fn();
        ++executed_;
    }
}

}  // namespace sbacore
