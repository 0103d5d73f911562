#pragma once

// Live 30 Hz closed loop behind a websocket endpoint at /ws.
//
// LoopCore is the whole protocol state machine without any I/O, so it can be
// driven directly in tests; LoopServer adds the clock and the network.

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "myoloop/taskbench.hpp"

namespace myo {

/// Frames produced by one event: `reply` goes to the client that caused it,
/// `broadcast` and `state` to every connected client. State frames may be
/// dropped under backpressure, the others never are.
struct LoopOutput {
  std::vector<std::string> reply;
  std::optional<std::string> state;
  std::vector<std::string> broadcast;
  bool intent_received = false;
};

struct LoopStats {
  std::uint64_t ticks = 0;
  std::size_t trials_completed = 0;
  double total_hold_s = 0;
};

class LoopCore {
 public:
  /// `seed` drives the EMG noise between trials; trials use their own seed.
  LoopCore(std::unique_ptr<TrialDecoder> decoder, ParticipantModel participant,
           SleevePlacement placement, std::uint64_t seed);

  static std::string hello_frame();
  static std::string error_frame(const std::string& message);

  /// Handles one client text frame. Observers may not change the loop.
  LoopOutput handle(const std::string& text, bool controller);

  /// Advances the loop by exactly one tick with the latest intent. The state
  /// frame is built only when `emit_state` is set; trial_done is always sent.
  LoopOutput tick(bool emit_state = true);

  bool trial_active() const { return trial_.has_value(); }
  const KinematicState& intent() const { return intent_; }
  const LoopStats& stats() const { return stats_; }

 private:
  LoopOutput finish_trial();

  std::unique_ptr<TrialDecoder> decoder_;
  ParticipantModel participant_;
  SleevePlacement placement_;
  DecodePipeline idle_;
  std::optional<TrialEngine> trial_;
  KinematicState intent_{};
  KinematicState decoded_{};
  LoopStats stats_;
};

namespace detail {
struct LoopServerImpl;
}

struct ServerOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0 asks the OS for a free port
  /// Replay mode: instead of the wall clock, every intent frame from the
  /// controller advances exactly one tick. Used for deterministic replays.
  bool lockstep = false;
  /// Frames queued per client beyond which state frames are dropped.
  std::size_t max_queued_frames = 64;
  /// Stop cleanly on SIGINT / SIGTERM.
  bool handle_signals = false;
};

class LoopServer {
 public:
  /// Binds immediately; throws Io if the address is unavailable.
  LoopServer(LoopCore core, const ServerOptions& options);
  ~LoopServer();
  LoopServer(const LoopServer&) = delete;
  LoopServer& operator=(const LoopServer&) = delete;

  std::uint16_t port() const;
  /// Serves until stop() is called. Runs the tick loop on its own thread.
  void run();
  /// Safe to call from any thread.
  void stop();

 private:
  std::unique_ptr<detail::LoopServerImpl> impl_;
};

}  // namespace myo
