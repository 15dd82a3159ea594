#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <iosfwd>
#include <mutex>
#include <vector>

#include "spadsim/mc_sim.hpp"

// Click stream serialization.
//
// CSV: header `timestamp_ns,gate_index,cause,gate_class`, one click per row.
//
// Binary: magic "SPDCLK01", then length-prefixed records. Every record is a
// little-endian u32 payload length followed by the payload:
//   f64  timestamp_ns
//   i64  gate_index
//   u8   cause        (0 photon, 1 dark, 2 afterpulse, 3 charge_persistence)
//   u8   gate_class   (0 detection/AB, 1 afterpulse/CD, 2 none)
//   u16  n_species
//   u32  trapped_filled[n_species]

namespace spadsim {

void write_clicks_csv(const std::vector<ClickRecord>& clicks, std::ostream& os);

void write_clicks_binary(const std::vector<ClickRecord>& clicks, std::ostream& os);

/// Parses a binary click stream; throws std::runtime_error on malformed input.
std::vector<ClickRecord> read_clicks_binary(std::istream& is);

/// Bounded FIFO channel for handing clicks from the simulator thread to a
/// consumer. push blocks when full, pop blocks when empty and returns false
/// once the channel is closed and drained.
class ClickChannel {
  public:
    explicit ClickChannel(std::size_t capacity);

    void push(const ClickRecord& record);
    bool pop(ClickRecord& record);
    void close();

  private:
    std::mutex mutex_;
    std::condition_variable not_full_;
    std::condition_variable not_empty_;
    std::deque<ClickRecord> buffer_;
    std::size_t capacity_;
    bool closed_ = false;
};

/// ClickSink adapter feeding a channel.
class ChannelSink : public ClickSink {
  public:
    explicit ChannelSink(ClickChannel& channel) : channel_(channel) {}
    void on_click(const ClickRecord& record) override { channel_.push(record); }

  private:
    ClickChannel& channel_;
};

}  // namespace spadsim
