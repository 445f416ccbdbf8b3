#include "sbacore/uelb.hpp"

#include <charconv>
#include <nlohmann/json.hpp>

namespace sbacore {

namespace {

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

std::uint32_t parse_u32(std::string_view s) {
    std::uint32_t v = 0;
    std::from_chars(s.data(), s.data() + s.size(), v);
    return v;
}

bool ordered_before(const InstanceView& a, const InstanceView& b) {
    if (a.effective_ues() != b.effective_ues()) return a.effective_ues() < b.effective_ues();
    if (a.load.queue != b.load.queue) return a.load.queue < b.load.queue;
    return a.id < b.id;
}

}  // namespace

std::string_view to_string(RouteReason r) {
    switch (r) {
        case RouteReason::Sticky: return "sticky";
        case RouteReason::LeastLoad: return "least_load";
        case RouteReason::Failover: return "failover";
    }
    return "sticky";
}

void RoutingView::apply(const ChangeEvent& ev) {
    std::string_view key = ev.key;
    bool gone = ev.type != ChangeType::Put;
    if (starts_with(key, keys::kInstancePrefix)) {
        auto id = InstanceId::parse(key.substr(keys::kInstancePrefix.size()));
        if (gone) {
            instances_.erase(id);
            suspects_.erase(id);
            return;
        }
        auto rec = InstanceRecord::from_json(ev.value);
        auto& v = instances_[id];
        v.id = id;
        v.load = rec.load;
        v.local_assignments = 0;
    } else if (starts_with(key, keys::kOwnerPrefix)) {
        auto supi = std::string(key.substr(keys::kOwnerPrefix.size()));
        if (gone) {
            owners_.erase(supi);
            return;
        }
        learn_owner(OwnershipEntry::from_json(ev.value, ev.version));
    } else if (starts_with(key, "bind/ngap/")) {
        auto n = parse_u32(key.substr(10));
        if (gone) {
            ngap_.erase(n);
        } else {
            ngap_[n] = ev.value;
        }
    } else if (starts_with(key, "bind/ip/")) {
        auto n = parse_u32(key.substr(8));
        if (gone) {
            ip_.erase(n);
        } else {
            ip_[n] = ev.value;
        }
    } else if (starts_with(key, keys::kNrfPrefix)) {
        auto id = InstanceId::parse(key.substr(keys::kNrfPrefix.size()));
        bool in = !gone && nlohmann::json::parse(ev.value).at("in_circulation").get<bool>();
        if (in || gone) {
            out_of_circulation_.erase(id);
        } else {
            out_of_circulation_.insert(id);
        }
    }
}

std::vector<InstanceView> RoutingView::live(NfKind kind) const {
    std::vector<InstanceView> out;
    for (auto it = instances_.lower_bound(InstanceId{kind, 0}); it != instances_.end() && it->first.kind == kind;
         ++it) {
        if (is_live(it->first)) out.push_back(it->second);
    }
    return out;
}

bool RoutingView::is_live(const InstanceId& id) const {
    return instances_.count(id) != 0 && suspects_.count(id) == 0 && out_of_circulation_.count(id) == 0;
}

std::optional<InstanceId> RoutingView::owner(const std::string& supi, NfKind kind) const {
    auto it = owners_.find(supi);
    if (it == owners_.end()) return std::nullopt;
    return kind == NfKind::Smf ? it->second.owner_smf : it->second.owner_amf;
}

void RoutingView::learn_owner(const OwnershipEntry& e) {
    auto& cur = owners_[e.ue];
    if (e.version >= cur.version) cur = e;
}

std::optional<std::string> RoutingView::supi_for_ngap(std::uint32_t ngap_id) const {
    auto it = ngap_.find(ngap_id);
    if (it == ngap_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::string> RoutingView::supi_for_ip(std::uint32_t ip_index) const {
    auto it = ip_.find(ip_index);
    if (it == ip_.end()) return std::nullopt;
    return it->second;
}

void RoutingView::note_assignment(const InstanceId& id) {
    auto it = instances_.find(id);
    if (it != instances_.end()) ++it->second.local_assignments;
}

void RoutingView::mark_suspect(const InstanceId& id) { suspects_.insert(id); }

std::vector<Subscription> attach_view(KvStore& store, RoutingView& view) {
    return attach_view(store, view,
                       {std::string(keys::kInstancePrefix), std::string(keys::kOwnerPrefix),
                        std::string(keys::kBindPrefix), std::string(keys::kNrfPrefix)});
}

std::vector<Subscription> attach_view(KvStore& store, RoutingView& view, const std::vector<std::string>& prefixes) {
    std::vector<Subscription> subs;
    for (const auto& prefix : prefixes) {
        for (const auto& [key, rec] : store.scan(prefix)) {
            view.apply(ChangeEvent{key, ChangeType::Put, rec.value, rec.version, Micros(0)});
        }
        subs.push_back(store.watch(prefix, [&view](const ChangeEvent& ev) { view.apply(ev); }));
    }
    return subs;
}

std::optional<InstanceId> UeLoadBalancer::least_loaded(NfKind kind, const std::set<InstanceId>& avoid) const {
    std::optional<InstanceView> best;
    for (const auto& v : view_.live(kind)) {
        if (avoid.count(v.id)) continue;
        if (!best || ordered_before(v, *best)) best = v;
    }
    if (!best) return std::nullopt;
    return best->id;
}

RouteDecision UeLoadBalancer::route(NfKind kind, const std::string& supi, const std::set<InstanceId>& avoid) {
    bool sticky_kind = kind == NfKind::Amf || kind == NfKind::Smf;
    if (!sticky_kind) {
        auto pick = least_loaded(kind, avoid);
        if (!pick) throw NoLiveInstance(kind);
        view_.note_assignment(*pick);
        return {*pick, RouteReason::LeastLoad};
    }

    auto owner = view_.owner(supi, kind);
    if (owner && view_.is_live(*owner) && avoid.count(*owner) == 0) return {*owner, RouteReason::Sticky};

    auto pick = least_loaded(kind, avoid);
    if (!pick) throw NoLiveInstance(kind);
    std::set<InstanceId> suspects = avoid;
    if (owner && view_.suspect(*owner)) suspects.insert(*owner);
    auto entry = drsm_.claim_ue_ownership(supi, *pick, suspects);
    view_.learn_owner(entry);
    auto winner = kind == NfKind::Amf ? entry.owner_amf : entry.owner_smf;
    if (winner == pick) {
        view_.note_assignment(*pick);
        return {*pick, owner ? RouteReason::Failover : RouteReason::LeastLoad};
    }
    return {*winner, RouteReason::Sticky};
}

std::string UeLoadBalancer::extract_ue_key(const ControlMessage& msg) const {
    switch (msg.channel) {
        case Channel::SctpSim: {
            if (msg.ue.ngap_id == 0) return msg.ue.supi;
            auto supi = view_.supi_for_ngap(msg.ue.ngap_id);
            if (!supi) throw UnknownNgapId(msg.ue.ngap_id);
            return *supi;
        }
        case Channel::PfcpSim: {
            if (!msg.ue.ip_index) throw UnknownIpIndex(0);
            auto supi = view_.supi_for_ip(*msg.ue.ip_index);
            if (!supi) throw UnknownIpIndex(*msg.ue.ip_index);
            return *supi;
        }
        case Channel::Sbi: return msg.ue.supi;
    }
    return msg.ue.supi;
}

}  // namespace sbacore
