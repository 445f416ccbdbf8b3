#pragma once

#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "sbacore/drsm.hpp"
#include "sbacore/transport.hpp"

namespace sbacore {

struct InstanceView {
    InstanceId id;
    Load load;
    std::uint32_t local_assignments = 0;

    std::uint32_t effective_ues() const { return load.ues + local_assignments; }
};

// Local picture of the shared DRSM state, fed by change events.
class RoutingView {
public:
    void apply(const ChangeEvent& ev);

    std::vector<InstanceView> live(NfKind kind) const;
    bool is_live(const InstanceId& id) const;
    bool known(const InstanceId& id) const { return instances_.count(id) != 0; }

    std::optional<InstanceId> owner(const std::string& supi, NfKind kind) const;
    void learn_owner(const OwnershipEntry& e);
    std::size_t owned_count() const { return owners_.size(); }

    std::optional<std::string> supi_for_ngap(std::uint32_t ngap_id) const;
    std::optional<std::string> supi_for_ip(std::uint32_t ip_index) const;

    void note_assignment(const InstanceId& id);
    void mark_suspect(const InstanceId& id);
    bool suspect(const InstanceId& id) const { return suspects_.count(id) != 0; }
    bool in_circulation(const InstanceId& id) const { return out_of_circulation_.count(id) == 0; }

private:
    std::map<InstanceId, InstanceView> instances_;
    std::set<InstanceId> suspects_;
    std::set<InstanceId> out_of_circulation_;
    std::unordered_map<std::string, OwnershipEntry> owners_;
    std::unordered_map<std::uint32_t, std::string> ngap_;
    std::unordered_map<std::uint32_t, std::string> ip_;
};

// Seeds the view from a scan, then keeps it fed. Returned subscriptions must outlive the view's use.
std::vector<Subscription> attach_view(KvStore& store, RoutingView& view);
std::vector<Subscription> attach_view(KvStore& store, RoutingView& view, const std::vector<std::string>& prefixes);

enum class RouteReason : std::uint8_t { Sticky, LeastLoad, Failover };

std::string_view to_string(RouteReason r);

struct RouteDecision {
    InstanceId target;
    RouteReason reason = RouteReason::LeastLoad;
};

class NoLiveInstance : public std::runtime_error {
public:
    explicit NoLiveInstance(NfKind kind)
        : std::runtime_error("no live instance of " + std::string(to_string(kind))) {}
};

class UnknownNgapId : public std::runtime_error {
public:
    explicit UnknownNgapId(std::uint32_t id) : std::runtime_error("unknown ngap id " + std::to_string(id)) {}
};

class UnknownIpIndex : public std::runtime_error {
public:
    explicit UnknownIpIndex(std::uint32_t ip) : std::runtime_error("unknown ip index " + std::to_string(ip)) {}
};

class UeLoadBalancer {
public:
    UeLoadBalancer(Drsm& drsm, RoutingView& view) : drsm_(drsm), view_(view) {}

    // Sticky for AMF/SMF through DRSM ownership; least-loaded for every other kind.
    RouteDecision route(NfKind kind, const std::string& supi, const std::set<InstanceId>& avoid = {});
    std::string extract_ue_key(const ControlMessage& msg) const;

    RoutingView& view() { return view_; }

private:
    std::optional<InstanceId> least_loaded(NfKind kind, const std::set<InstanceId>& avoid) const;

    Drsm& drsm_;
    RoutingView& view_;
};

}  // namespace sbacore
