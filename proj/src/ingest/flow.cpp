#include <algorithm>
#include <map>

#include "netconv/ingest/flow.hpp"

namespace netconv::ingest {

std::vector<Flow> assemble_flows(std::span<const RawPacket> packets, double idle_timeout_s) {
  std::vector<std::size_t> order(packets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return packets[a].timestamp_us < packets[b].timestamp_us; });

  const auto timeout_us = static_cast<std::int64_t>(idle_timeout_s * 1e6);
  std::vector<Flow> flows;
  std::map<FlowKey, std::size_t> open;  // key -> index of the flow currently accepting packets
  for (const std::size_t i : order) {
    const RawPacket& p = packets[i];
    const auto key = flow_key_of(p);
    if (!key) continue;
    auto it = open.find(*key);
    if (it != open.end() && p.timestamp_us - flows[it->second].packets.back().timestamp_us <= timeout_us) {
      flows[it->second].packets.push_back(p);
      continue;
    }
    flows.push_back(Flow{*key, {p}, std::nullopt});
    open[*key] = flows.size() - 1;
  }
  std::stable_sort(flows.begin(), flows.end(), [](const Flow& a, const Flow& b) {
    const auto ta = a.packets.front().timestamp_us, tb = b.packets.front().timestamp_us;
    if (ta != tb) return ta < tb;
    return a.key < b.key;
  });
  return flows;
}

}  // namespace netconv::ingest
