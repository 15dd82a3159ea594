#include "spadsim/mc_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

#include "spadsim/rng.hpp"

namespace spadsim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// sigma = FWHM / (2 sqrt(2 ln 2))
constexpr double kFwhmToSigma = 0.42466090014400953;

void require(bool ok, const char* message) {
    if (!ok) throw std::invalid_argument(message);
}

}  // namespace

const char* to_string(ClickCause c) {
    switch (c) {
        case ClickCause::photon: return "photon";
        case ClickCause::dark: return "dark";
        case ClickCause::afterpulse: return "afterpulse";
        case ClickCause::charge_persistence: return "charge_persistence";
    }
    return "unknown";
}

const char* to_string(GateClass g) {
    switch (g) {
        case GateClass::detection: return "AB";
        case GateClass::afterpulse: return "CD";
        case GateClass::none: return "none";
    }
    return "unknown";
}

std::uint64_t RunSummary::total_clicks() const {
    std::uint64_t n = 0;
    for (const auto& row : counts)
        for (std::uint64_t c : row) n += c;
    return n;
}

std::uint64_t RunSummary::class_total(GateClass g) const {
    std::uint64_t n = 0;
    for (std::uint64_t c : counts[static_cast<int>(g)]) n += c;
    return n;
}

std::uint64_t RunSummary::count(GateClass g, ClickCause c) const {
    return counts[static_cast<int>(g)][static_cast<int>(c)];
}

double resolve_photon_offset(const std::string& preset, double gate_width_ns) {
    if (preset == "front") return 5.0;
    if (preset == "mid") return 0.5 * gate_width_ns;
    if (preset == "end") return gate_width_ns - 5.0;
    if (preset == "before_gate") return -5.0;
    throw std::invalid_argument("photon_offset: unknown preset '" + preset + "'");
}

double relative_avalanche_charge(const QuenchTimingModel& q,
                                 double onset_to_gate_end_ns) {
    const double g = std::max(onset_to_gate_end_ns, 0.0);
    const double r = q.reaction_ns;
    const double c = q.closing_ns;
    const double full = r + 0.5 * c;
    double integral;
    if (g >= r + c) {
        integral = full;
    } else if (g <= r) {
        integral = g;
    } else {
        const double into_ramp = g - r;
        integral = r + 0.5 * into_ramp * (2.0 - into_ramp / c);
    }
    return integral / full;
}

void validate(const DeviceConfig& device) {
    require(device.detection_efficiency >= 0.0 && device.detection_efficiency <= 1.0,
            "device.detection_efficiency: must be in [0, 1]");
    require(device.dark_rate_per_ns >= 0.0, "device.dark_rate_per_ns: must be >= 0");
    require(device.temperature_k > 0.0, "device.temperature_k: must be > 0");
    require(device.trigger_prob > 0.0 && device.trigger_prob <= 1.0,
            "device.trigger_prob: must be in (0, 1]");
    validate(device.traps);
    validate(device.charge_persistence);
    validate(device.quench);
}

void validate(const GateSchedule& schedule) {
    require(schedule.deadtime_ns >= 0.0, "schedule.deadtime_ns: must be >= 0");
    if (schedule.mode == GateMode::gated) {
        require(schedule.frequency_hz > 0.0, "schedule.frequency_hz: must be > 0");
        require(schedule.gate_width_ns > 0.0, "schedule.gate_width_ns: must be > 0");
        require(schedule.frequency_hz * schedule.gate_width_ns * 1e-9 < 1.0,
                "schedule.gate_width_ns: duty cycle must stay below 1");
        require(schedule.afterpulse_gate_ns >= 0.0,
                "schedule.afterpulse_gate_ns: must be >= 0");
    }
}

void validate(const PhotonSource& source) {
    require(source.mean_photon_number >= 0.0,
            "source.mean_photon_number: must be >= 0");
    require(source.rate_hz >= 0.0, "source.rate_hz: must be >= 0");
    require(source.pulse_fwhm_ns >= 0.0, "source.pulse_fwhm_ns: must be >= 0");
}

namespace {

// Candidate priority on equal timestamps. Gate closures are implicit (window
// bounds), so only click-producing kinds appear in the queue.
enum CandidateKind : int {
    kind_residual = 0,
    kind_release = 1,
    kind_photon = 2,
    kind_dark = 3,
};

struct Candidate {
    double t = 0.0;
    int kind = kind_dark;
    int seq = 0;
    std::uint32_t species = 0;
};

struct PendingRelease {
    double t = 0.0;
    std::uint32_t species = 0;
};

struct ReleaseAfter {
    bool operator()(const PendingRelease& a, const PendingRelease& b) const {
        return a.t > b.t;
    }
};

class Engine {
  public:
    Engine(const DeviceConfig& device, const GateSchedule& schedule,
           const PhotonSource& source, std::uint64_t seed,
           std::vector<ClickRecord>* out, ClickSink* sink)
        : dev_(device),
          sch_(schedule),
          src_(source),
          photons_(seed, "photons"),
          darks_(seed, "darks"),
          traps_(seed, "traps"),
          residual_(seed, "residual"),
          trigger_(seed, "trigger"),
          jitter_(seed, "jitter"),
          out_(out),
          sink_(sink) {
        summary_.seed = seed;
        tau_.reserve(dev_.traps.size());
        for (const TrapSpecies& t : dev_.traps)
            tau_.push_back(scale_detrap_tau(t, dev_.temperature_k));
    }

    RunSummary run_gated(std::uint64_t n_gates) {
        const double period = 1e9 / sch_.frequency_hz;
        const double width = sch_.gate_width_ns;
        double busy_until = -kInf;
        for (std::uint64_t i = 0; i < n_gates; ++i) {
            const double t_open = static_cast<double>(i) * period;
            const double t_close = t_open + width;
            if (t_open < busy_until) {
                ++summary_.gates_suppressed;
                continue;
            }
            ++summary_.gates_armed;
            drop_releases_before(t_open);
            const auto click = detection_window(static_cast<std::int64_t>(i),
                                                t_open, t_close);
            if (!click.happened) continue;
            ++summary_.triggered;
            const double quench_done =
                std::min(click.t + dev_.quench.reaction_ns + dev_.quench.closing_ns,
                         t_close);
            if (sch_.afterpulse_gate_ns > 0.0) {
                const double cd_open = quench_done + sch_.deadtime_ns;
                const double cd_close = cd_open + sch_.afterpulse_gate_ns;
                drop_releases_before(cd_open);
                afterpulse_window(static_cast<std::int64_t>(i), cd_open, cd_close);
                busy_until = cd_close;
            } else {
                busy_until = quench_done + sch_.deadtime_ns;
            }
        }
        summary_.gates_nominal = n_gates;
        summary_.duration_ns = static_cast<double>(n_gates) * period;
        finish_rates();
        return summary_;
    }

    RunSummary run_free(double duration_ns) {
        require(src_.kind == SourceKind::continuous || src_.mean_photon_number == 0.0,
                "run_free: pulsed sources are undefined without gates");
        const double photon_rate = src_.rate_hz * 1e-9;
        const double dark_rate = dev_.dark_rate_per_ns;
        double armed_since = 0.0;
        double next_photon =
            photon_rate > 0.0 ? photons_.exponential(1.0 / photon_rate) : kInf;
        double next_dark =
            dark_rate > 0.0 ? darks_.exponential(1.0 / dark_rate) : kInf;
        while (true) {
            drop_releases_before(armed_since);
            const double next_release = pending_.empty() ? kInf : pending_.top().t;
            // Tie order matches the queue priority: release, photon, dark.
            double t = next_release;
            int kind = kind_release;
            if (next_photon < t) {
                t = next_photon;
                kind = kind_photon;
            }
            if (next_dark < t) {
                t = next_dark;
                kind = kind_dark;
            }
            if (t >= duration_ns) break;
            bool fired = false;
            ClickCause cause = ClickCause::dark;
            if (kind == kind_photon) {
                next_photon += photons_.exponential(1.0 / photon_rate);
                if (t >= armed_since && photons_.bernoulli(dev_.detection_efficiency)) {
                    fired = true;
                    cause = ClickCause::photon;
                }
            } else if (kind == kind_release) {
                const std::uint32_t species = pending_.top().species;
                pending_.pop();
                ++summary_.trap_counters.processed;
                (void)species;
                if (trigger_.bernoulli(dev_.trigger_prob)) {
                    fired = true;
                    cause = ClickCause::afterpulse;
                }
            } else {
                fired = true;
                cause = ClickCause::dark;
            }
            if (fired) {
                emit(t, -1, cause, GateClass::none, kInf);
                armed_since = t + dev_.quench.reaction_ns + dev_.quench.closing_ns +
                              sch_.deadtime_ns;
                next_dark = dark_rate > 0.0
                                ? armed_since + darks_.exponential(1.0 / dark_rate)
                                : kInf;
            } else if (kind == kind_dark) {
                next_dark += darks_.exponential(1.0 / dark_rate);
            }
        }
        summary_.duration_ns = duration_ns;
        finish_rates();
        return summary_;
    }

  private:
    struct WindowClick {
        bool happened = false;
        double t = 0.0;
    };

    // Gate sensitivity: full from opening, linear fall to zero over the
    // quench closing time ahead of the nominal close.
    double gate_height(double t, double t_open, double t_close) const {
        if (t < t_open || t >= t_close) return 0.0;
        const double fall = std::min(dev_.quench.closing_ns, t_close - t_open);
        const double ramp_start = t_close - fall;
        if (t <= ramp_start) return 1.0;
        return (t_close - t) / fall;
    }

    void drop_releases_before(double t) {
        while (!pending_.empty() && pending_.top().t < t) {
            pending_.pop();
            ++summary_.trap_counters.processed;
        }
    }

    void gather_common(double t_open, double t_close) {
        scratch_.clear();
        int seq = 0;
        if (dev_.dark_rate_per_ns > 0.0) {
            const double mean = 1.0 / dev_.dark_rate_per_ns;
            for (double t = t_open + darks_.exponential(mean); t < t_close;
                 t += darks_.exponential(mean))
                scratch_.push_back({t, kind_dark, seq++});
        }
        while (!pending_.empty() && pending_.top().t < t_close) {
            scratch_.push_back({pending_.top().t, kind_release, seq++,
                                pending_.top().species});
            pending_.pop();
            ++summary_.trap_counters.processed;
        }
    }

    void add_pulsed_photons(double t_open, double t_close) {
        const double nominal = t_open + sch_.photon_offset_ns;
        const std::uint32_t n = photons_.poisson(src_.mean_photon_number);
        const double sigma = src_.pulse_fwhm_ns * kFwhmToSigma;
        int seq = static_cast<int>(scratch_.size());
        for (std::uint32_t k = 0; k < n; ++k) {
            const double arrival = sigma > 0.0 ? nominal + photons_.gaussian(sigma)
                                               : nominal;
            const double p =
                dev_.detection_efficiency * gate_height(arrival, t_open, t_close);
            const bool detected = photons_.uniform() < p;
            if (detected) scratch_.push_back({arrival, kind_photon, seq++});
        }
    }

    void add_cw_photons(double t_open, double t_close) {
        const double rate = src_.rate_hz * 1e-9;
        if (rate <= 0.0) return;
        const double mean = 1.0 / rate;
        int seq = static_cast<int>(scratch_.size());
        for (double t = t_open + photons_.exponential(mean); t < t_close;
             t += photons_.exponential(mean)) {
            const double p = dev_.detection_efficiency * gate_height(t, t_open, t_close);
            if (photons_.uniform() < p) scratch_.push_back({t, kind_photon, seq++});
        }
    }

    WindowClick detection_window(std::int64_t gate, double t_open, double t_close) {
        gather_common(t_open, t_close);
        if (src_.kind == SourceKind::pulsed && src_.mean_photon_number > 0.0) {
            if (sch_.photon_offset_ns < 0.0) {
                const double p = charge_persistence_probability(
                    dev_.charge_persistence, -sch_.photon_offset_ns,
                    src_.mean_photon_number);
                if (residual_.bernoulli(p))
                    scratch_.push_back({t_open, kind_residual,
                                        static_cast<int>(scratch_.size())});
            } else {
                add_pulsed_photons(t_open, t_close);
            }
        } else if (src_.kind == SourceKind::continuous) {
            add_cw_photons(t_open, t_close);
        }
        return scan(gate, t_close, GateClass::detection);
    }

    void afterpulse_window(std::int64_t gate, double t_open, double t_close) {
        gather_common(t_open, t_close);
        scan(gate, t_close, GateClass::afterpulse);
    }

    WindowClick scan(std::int64_t gate, double t_close, GateClass klass) {
        std::sort(scratch_.begin(), scratch_.end(),
                  [](const Candidate& a, const Candidate& b) {
                      if (a.t != b.t) return a.t < b.t;
                      if (a.kind != b.kind) return a.kind < b.kind;
                      return a.seq < b.seq;
                  });
        for (const Candidate& c : scratch_) {
            if (c.kind == kind_release && !trigger_.bernoulli(dev_.trigger_prob))
                continue;
            ClickCause cause = ClickCause::dark;
            switch (c.kind) {
                case kind_residual: cause = ClickCause::charge_persistence; break;
                case kind_release: cause = ClickCause::afterpulse; break;
                case kind_photon: cause = ClickCause::photon; break;
                default: break;
            }
            emit(c.t, gate, cause, klass, t_close);
            return {true, c.t};
        }
        return {false, 0.0};
    }

    void emit(double t, std::int64_t gate, ClickCause cause, GateClass klass,
              double gate_close) {
        ClickRecord rec;
        rec.timestamp_ns = dev_.quench.spread_ns > 0.0
                               ? t + jitter_.gaussian(dev_.quench.spread_ns)
                               : t;
        rec.gate_index = gate;
        rec.cause = cause;
        rec.gate_class = klass;
        rec.trapped_filled.resize(dev_.traps.size());
        const double charge =
            std::isinf(gate_close)
                ? 1.0
                : relative_avalanche_charge(dev_.quench, gate_close - t);
        for (std::size_t s = 0; s < dev_.traps.size(); ++s) {
            const std::uint32_t filled =
                traps_.poisson(dev_.traps[s].mean_filled * charge);
            rec.trapped_filled[s] = filled;
            summary_.trap_counters.created += filled;
            for (std::uint32_t j = 0; j < filled; ++j)
                pending_.push({t + traps_.exponential(tau_[s]),
                               static_cast<std::uint32_t>(s)});
        }
        ++summary_.counts[static_cast<int>(klass)][static_cast<int>(cause)];
        if (sink_ != nullptr)
            sink_->on_click(rec);
        else if (out_ != nullptr)
            out_->push_back(std::move(rec));
    }

    void finish_rates() {
        summary_.trap_counters.remaining = pending_.size();
        const double seconds = summary_.duration_ns * 1e-9;
        if (seconds > 0.0) {
            const std::uint64_t detections =
                sch_.mode == GateMode::gated
                    ? summary_.class_total(GateClass::detection)
                    : summary_.total_clicks();
            summary_.click_rate_hz = static_cast<double>(detections) / seconds;
            summary_.afterpulse_gate_rate_hz =
                static_cast<double>(summary_.class_total(GateClass::afterpulse)) /
                seconds;
        }
    }

    const DeviceConfig& dev_;
    const GateSchedule& sch_;
    const PhotonSource& src_;
    RandomStream photons_, darks_, traps_, residual_, trigger_, jitter_;
    std::vector<double> tau_;
    std::vector<Candidate> scratch_;
    std::priority_queue<PendingRelease, std::vector<PendingRelease>, ReleaseAfter>
        pending_;
    RunSummary summary_;
    std::vector<ClickRecord>* out_;
    ClickSink* sink_;
};

}  // namespace

RunResult run_gated(const DeviceConfig& device, const GateSchedule& schedule,
                    const PhotonSource& source, std::uint64_t n_gates,
                    std::uint64_t seed, ClickSink* sink) {
    validate(device);
    validate(schedule);
    validate(source);
    require(schedule.mode == GateMode::gated, "run_gated: schedule must be gated");
    RunResult result;
    Engine engine(device, schedule, source, seed,
                  sink == nullptr ? &result.clicks : nullptr, sink);
    result.summary = engine.run_gated(n_gates);
    return result;
}

RunResult run_free(const DeviceConfig& device, const GateSchedule& schedule,
                   const PhotonSource& source, double duration_ns,
                   std::uint64_t seed, ClickSink* sink) {
    validate(device);
    validate(schedule);
    validate(source);
    require(schedule.mode == GateMode::free_running,
            "run_free: schedule must be free_running");
    require(source.kind == SourceKind::continuous || source.mean_photon_number == 0.0,
            "run_free: pulsed sources are undefined without gates");
    require(duration_ns > 0.0, "duration_ns: must be > 0");
    RunResult result;
    Engine engine(device, schedule, source, seed,
                  sink == nullptr ? &result.clicks : nullptr, sink);
    result.summary = engine.run_free(duration_ns);
    return result;
}

RunResult inject_pre_gate_photons(const DeviceConfig& device,
                                  const GateSchedule& schedule,
                                  const PhotonSource& source, double advance_ns,
                                  std::uint64_t n_gates, std::uint64_t seed) {
    require(schedule.mode == GateMode::gated,
            "inject_pre_gate_photons: free-running mode has no gate opening");
    require(advance_ns > 0.0, "advance_ns: must be > 0");
    GateSchedule pre = schedule;
    pre.photon_offset_ns = -advance_ns;
    return run_gated(device, pre, source, n_gates, seed);
}

}  // namespace spadsim
