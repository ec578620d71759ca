#include "dropscan/config.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "dropscan/error.hpp"

namespace dropscan {

using nlohmann::json;

namespace {

class Source {
 public:
  Source(std::string_view text, std::string name) : text_(text), name_(std::move(name)) {}

  json parse() const {
    try {
      return json::parse(text_);
    } catch (const json::parse_error& e) {
      const auto at = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text_.size());
      throw Error(ErrorKind::ConfigError, name_ + ":" + std::to_string(line_at(at)) + ": " + e.what());
    }
  }

  [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
    throw Error(ErrorKind::ConfigError, name_ + ":" + std::to_string(line_of(path)) + ": " + path + ": " + msg);
  }

 private:
  std::size_t line_at(std::size_t pos) const {
    return 1 + static_cast<std::size_t>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
  }

  // Best effort: follow the key names of the path through the text. Array
  // indices are skipped by counting objects opened after the array key.
  std::size_t line_of(const std::string& path) const {
    std::size_t pos = 0;
    std::istringstream segs(path);
    std::string seg;
    while (std::getline(segs, seg, '/')) {
      if (seg.empty()) continue;
      if (std::all_of(seg.begin(), seg.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        auto n = std::stoul(seg);
        std::size_t p = text_.find('[', pos);
        if (p == std::string_view::npos) break;
        int depth = 0;
        for (std::size_t i = p + 1; i < text_.size(); ++i) {
          const char c = text_[i];
          if (c == '{' || c == '[') {
            if (depth == 0 && n-- == 0) {
              pos = i;
              break;
            }
            ++depth;
          } else if (c == '}' || c == ']') {
            if (depth == 0) break;
            --depth;
          }
        }
        continue;
      }
      const std::size_t p = text_.find("\"" + seg + "\"", pos);
      if (p == std::string_view::npos) break;
      pos = p;
    }
    return line_at(pos);
  }

  std::string_view text_;
  std::string name_;
};

class Obj {
 public:
  Obj(const Source& src, const json& j, std::string path) : src_(src), j_(j), path_(std::move(path)) {
    if (!j_.is_object()) src_.fail(path_.empty() ? "/" : path_, "expected an object");
  }

  void only(std::initializer_list<std::string_view> keys) const {
    for (const auto& [k, v] : j_.items()) {
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) src_.fail(at(k), "unknown field");
    }
  }

  bool has(const char* k) const { return j_.contains(k); }

  template <typename T>
  T get(const char* k, T fallback) const {
    return has(k) ? need<T>(k) : fallback;
  }

  template <typename T>
  T need(const char* k) const {
    if (!has(k)) src_.fail(at(k), "required field is missing");
    const json& v = j_.at(k);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) src_.fail(at(k), "expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) src_.fail(at(k), "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) {
          const auto u = v.get<std::uint64_t>();
          if (u > static_cast<std::uint64_t>(std::numeric_limits<T>::max())) src_.fail(at(k), "out of range");
          return static_cast<T>(u);
        }
        src_.fail(at(k), "must not be negative");
      } else {
        const auto i = v.get<std::int64_t>();
        if (i < std::numeric_limits<T>::min() || i > std::numeric_limits<T>::max()) src_.fail(at(k), "out of range");
        return static_cast<T>(i);
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) src_.fail(at(k), "expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) src_.fail(at(k), "expected a string");
      return v.get<std::string>();
    } else {
      try {
        return v.get<T>();
      } catch (const json::exception& e) {
        src_.fail(at(k), e.what());
      }
    }
  }

  Ipv4 addr(const char* k) const {
    const auto s = need<std::string>(k);
    const auto a = parse_ipv4(s);
    if (!a) src_.fail(at(k), "not an IPv4 address: " + s);
    return *a;
  }

  std::optional<Ipv4> optional_addr(const char* k) const {
    if (!has(k) || j_.at(k).is_null()) return std::nullopt;
    return addr(k);
  }

  Obj obj(const char* k) const { return Obj(src_, j_.at(k), at(k)); }

  std::vector<Obj> array(const char* k) const {
    std::vector<Obj> out;
    if (!has(k)) return out;
    const json& v = j_.at(k);
    if (!v.is_array()) src_.fail(at(k), "expected an array");
    for (std::size_t i = 0; i < v.size(); ++i) out.emplace_back(src_, v[i], at(k) + "/" + std::to_string(i));
    return out;
  }

  [[noreturn]] void fail(const char* k, const std::string& msg) const { src_.fail(at(k), msg); }
  [[noreturn]] void fail(const std::string& msg) const { src_.fail(path_.empty() ? "/" : path_, msg); }

  // Runs a validator and reports what it throws against this object.
  template <typename F>
  void check(F&& validate) const {
    try {
      validate();
    } catch (const Error& e) {
      fail(e.what());
    }
  }

  const std::string& path() const { return path_; }

 private:
  std::string at(std::string_view k) const { return path_ + "/" + std::string(k); }

  const Source& src_;
  const json& j_;
  std::string path_;
};

NoiseModel read_noise(const Obj& o) {
  o.only({"kind", "burst_rate", "burst_size_mean", "burst_spread_ms", "ar_phi", "ar_mean", "ar_sigma"});
  NoiseModel n;
  const auto kind = o.get<std::string>("kind", "idle");
  if (kind == "idle") {
    n.kind = NoiseModel::Kind::Idle;
  } else if (kind == "compound_poisson") {
    n.kind = NoiseModel::Kind::CompoundPoisson;
  } else if (kind == "ar1") {
    n.kind = NoiseModel::Kind::Ar1;
  } else {
    o.fail("kind", "expected idle, compound_poisson or ar1");
  }
  n.burst_rate = o.get("burst_rate", n.burst_rate);
  n.burst_size_mean = o.get("burst_size_mean", n.burst_size_mean);
  n.burst_spread_ms = o.get("burst_spread_ms", n.burst_spread_ms);
  n.ar_phi = o.get("ar_phi", n.ar_phi);
  n.ar_mean = o.get("ar_mean", n.ar_mean);
  n.ar_sigma = o.get("ar_sigma", n.ar_sigma);
  o.check([&] { n.validate(); });
  return n;
}

// The model readers leave unknown-key checks to the caller, whose object may
// carry extra fields such as addr and group.
ClientModel read_client_model(const Obj& o) {
  ClientModel c;
  c.initial_ipid = o.get<std::uint16_t>("initial_ipid", 0);
  const auto mode = o.get<std::string>("ipid_mode", "global");
  if (mode == "global") {
    c.ipid_mode = IpidMode::Global;
  } else if (mode == "per_destination") {
    c.ipid_mode = IpidMode::PerDestination;
  } else if (mode == "constant") {
    c.ipid_mode = IpidMode::Constant;
  } else if (mode == "random") {
    c.ipid_mode = IpidMode::Random;
  } else {
    o.fail("ipid_mode", "expected global, per_destination, constant or random");
  }
  if (o.has("noise")) c.noise = read_noise(o.obj("noise"));
  c.rst_response = o.get("rst_response", c.rst_response);
  c.icmp_unreachable = o.get("icmp_unreachable", c.icmp_unreachable);
  o.check([&] { c.validate(); });
  return c;
}

ServerModel read_server_model(const Obj& o) {
  ServerModel s;
  if (o.has("schedule_offsets_ms")) {
    const auto offsets = o.need<std::vector<std::int64_t>>("schedule_offsets_ms");
    o.check([&] { s.schedule = RetransSchedule::from_offsets(offsets); });
  }
  s.backlog_timeout_s = o.get("backlog_timeout_s", s.backlog_timeout_s);
  s.backlog_capacity = o.get("backlog_capacity", s.backlog_capacity);
  s.open_port = o.get("open_port", s.open_port);
  o.check([&] { s.validate(); });
  return s;
}

CensorPolicy read_censor(const Obj& o) {
  o.only({"direction", "drop_prob", "client", "server", "server_port"});
  CensorPolicy c;
  const auto dir = o.need<std::string>("direction");
  const auto d = censor_direction_from_string(dir);
  if (!d) o.fail("direction", "expected None, ServerToClient or ClientToServer");
  c.direction = *d;
  c.drop_prob = o.get("drop_prob", c.drop_prob);
  c.client = o.optional_addr("client");
  c.server = o.optional_addr("server");
  if (o.has("server_port")) c.server_port = o.need<std::uint16_t>("server_port");
  o.check([&] { c.validate(); });
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void RunConfig::validate() const {
  if (backend == BackendKind::Live && !ethics_acknowledged) {
    throw Error(ErrorKind::ConfigError, "the live backend sends spoofed packets to third parties; "
                                        "rerun with --i-understand-ethics to acknowledge");
  }
  engine.validate();
  test.validate();
  if (base_duration_s <= 0 || intervention_duration_s <= 0 || cooldown_s < 0 || replications <= 0) {
    throw Error(ErrorKind::ConfigError, "experiment durations and replications must be positive");
  }
  if (qualification_s < 2) throw Error(ErrorKind::ConfigError, "qualification_s must be at least 2");
  if (backend == BackendKind::Sim) {
    for (const auto& t : targets) {
      if (!world.client(t.client)) throw Error(ErrorKind::ConfigError, "target client not simulated: " + format_ipv4(t.client));
      if (!world.server(t.server)) throw Error(ErrorKind::ConfigError, "target server not simulated: " + format_ipv4(t.server));
    }
  }
}

std::vector<ExperimentPlan> RunConfig::plans() const {
  std::vector<ExperimentPlan> out;
  for (const auto& t : targets) {
    ExperimentPlan p;
    p.client = t.client;
    p.server = t.server;
    p.server_port = t.port;
    p.base_duration_s = base_duration_s;
    p.intervention_duration_s = intervention_duration_s;
    p.cooldown_s = cooldown_s;
    p.replications = replications;
    p.client_group = t.client_group;
    p.server_group = t.server_group;
    if (p.client_group.empty())
      if (const auto* c = world.client(t.client)) p.client_group = c->group;
    if (p.server_group.empty())
      if (const auto* s = world.server(t.server)) p.server_group = s->group;
    out.push_back(std::move(p));
  }
  return out;
}

RunConfig parse_run_config(std::string_view text, const std::string& source) {
  const Source src(text, source);
  const json doc = src.parse();
  const Obj root(src, doc, "");
  root.only({"backend", "output", "seed", "parallelism", "qualification_s", "experiment", "engine", "test", "targets",
             "sim"});
  RunConfig cfg;

  const auto backend = root.get<std::string>("backend", "sim");
  if (backend == "sim") {
    cfg.backend = BackendKind::Sim;
  } else if (backend == "live") {
    cfg.backend = BackendKind::Live;
  } else {
    root.fail("backend", "expected sim or live");
  }
  cfg.output_path = root.get<std::string>("output", "");
  cfg.seed = root.get("seed", cfg.seed);
  cfg.parallelism = root.get("parallelism", cfg.parallelism);
  if (cfg.parallelism == 0) root.fail("parallelism", "must be at least 1");
  cfg.qualification_s = root.get("qualification_s", cfg.qualification_s);
  if (cfg.qualification_s < 2) root.fail("qualification_s", "must be at least 2");

  if (root.has("experiment")) {
    const Obj e = root.obj("experiment");
    e.only({"base_duration_s", "intervention_duration_s", "cooldown_s", "replications"});
    cfg.base_duration_s = e.get("base_duration_s", cfg.base_duration_s);
    cfg.intervention_duration_s = e.get("intervention_duration_s", cfg.intervention_duration_s);
    cfg.cooldown_s = e.get("cooldown_s", cfg.cooldown_s);
    cfg.replications = e.get("replications", cfg.replications);
    if (cfg.base_duration_s <= 0) e.fail("base_duration_s", "must be positive");
    if (cfg.intervention_duration_s <= 0) e.fail("intervention_duration_s", "must be positive");
    if (cfg.cooldown_s < 0) e.fail("cooldown_s", "must not be negative");
    if (cfg.replications <= 0) e.fail("replications", "must be positive");
  }

  if (root.has("engine")) {
    const Obj e = root.obj("engine");
    e.only({"return_addr_a", "return_addr_b", "self_test_listener", "forge_rate_per_s", "probe_timeout_ms",
            "probe_interval_ms", "probe_port_equals_server_port"});
    if (e.has("return_addr_a")) cfg.engine.return_addr_a = e.addr("return_addr_a");
    if (e.has("return_addr_b")) cfg.engine.return_addr_b = e.addr("return_addr_b");
    if (e.has("self_test_listener")) cfg.self_test_listener = e.addr("self_test_listener");
    cfg.engine.forge_rate_per_s = e.get("forge_rate_per_s", cfg.engine.forge_rate_per_s);
    if (cfg.engine.forge_rate_per_s < 1 || cfg.engine.forge_rate_per_s > EngineConfig::kMaxForgeRate) {
      e.fail("forge_rate_per_s", "must lie in [1, " + std::to_string(EngineConfig::kMaxForgeRate) +
                                     "]; higher rates are not allowed");
    }
    cfg.engine.probe_timeout_ms = e.get("probe_timeout_ms", cfg.engine.probe_timeout_ms);
    cfg.engine.probe_interval_ms = e.get("probe_interval_ms", cfg.engine.probe_interval_ms);
    cfg.engine.probe_port_equals_server_port =
        e.get("probe_port_equals_server_port", cfg.engine.probe_port_equals_server_port);
    e.check([&] { cfg.engine.validate(); });
  }

  if (root.has("test")) {
    const Obj t = root.obj("test");
    t.only({"s", "alpha_outlier", "alpha_test", "max_outlier_iterations", "min_innovation_variance", "threads"});
    cfg.test.s = t.get("s", cfg.test.s);
    cfg.test.alpha_outlier = t.get("alpha_outlier", cfg.test.alpha_outlier);
    cfg.test.alpha_test = t.get("alpha_test", cfg.test.alpha_test);
    cfg.test.max_outlier_iterations = t.get("max_outlier_iterations", cfg.test.max_outlier_iterations);
    cfg.test.min_innovation_variance = t.get("min_innovation_variance", cfg.test.min_innovation_variance);
    cfg.test.threads = t.get("threads", cfg.test.threads);
    t.check([&] { cfg.test.validate(); });
  }

  for (const Obj& t : root.array("targets")) {
    t.only({"client", "server", "port", "client_group", "server_group"});
    Target tg;
    tg.client = t.addr("client");
    tg.server = t.addr("server");
    tg.port = t.get("port", tg.port);
    tg.client_group = t.get<std::string>("client_group", "");
    tg.server_group = t.get<std::string>("server_group", "");
    cfg.targets.push_back(std::move(tg));
  }

  if (root.has("sim")) {
    const Obj s = root.obj("sim");
    s.only({"clients", "servers", "censors", "loss_prob", "delay_ms", "delay_jitter_ms", "egress_rewrite"});
    for (const Obj& c : s.array("clients")) {
      c.only({"addr", "group", "initial_ipid", "ipid_mode", "noise", "rst_response", "icmp_unreachable"});
      cfg.world.clients.push_back({c.addr("addr"), c.get<std::string>("group", ""), read_client_model(c)});
    }
    for (const Obj& v : s.array("servers")) {
      v.only({"addr", "group", "schedule_offsets_ms", "backlog_timeout_s", "backlog_capacity", "open_port"});
      cfg.world.servers.push_back({v.addr("addr"), v.get<std::string>("group", ""), read_server_model(v)});
    }
    for (const Obj& c : s.array("censors")) cfg.world.censors.push_back(read_censor(c));
    cfg.world.loss_prob = s.get("loss_prob", cfg.world.loss_prob);
    if (cfg.world.loss_prob < 0.0 || cfg.world.loss_prob > 1.0) s.fail("loss_prob", "must lie in [0, 1]");
    cfg.world.delay_ms = s.get("delay_ms", cfg.world.delay_ms);
    if (cfg.world.delay_ms < 0.0) s.fail("delay_ms", "must not be negative");
    cfg.world.delay_jitter_ms = s.get("delay_jitter_ms", cfg.world.delay_jitter_ms);
    if (cfg.world.delay_jitter_ms < 0.0) s.fail("delay_jitter_ms", "must not be negative");
    cfg.world.egress_rewrite = s.get("egress_rewrite", cfg.world.egress_rewrite);
  }
  cfg.world.seed = cfg.seed;

  if (cfg.backend == BackendKind::Sim) {
    const auto targets = root.array("targets");
    for (std::size_t i = 0; i < cfg.targets.size(); ++i) {
      if (!cfg.world.client(cfg.targets[i].client)) targets[i].fail("client", "no simulated client has this address");
      if (!cfg.world.server(cfg.targets[i].server)) targets[i].fail("server", "no simulated server has this address");
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_file(path), path); }

ScenarioFile parse_scenario_file(std::string_view text, const std::string& source) {
  const Source src(text, source);
  const json doc = src.parse();
  const Obj root(src, doc, "");
  root.only({"seeds_per_scenario", "threads", "scenarios"});
  ScenarioFile f;
  f.seeds_per_scenario = root.get("seeds_per_scenario", f.seeds_per_scenario);
  f.threads = root.get("threads", f.threads);
  if (f.threads == 0) root.fail("threads", "must be at least 1");
  for (const Obj& o : root.array("scenarios")) {
    o.only({"name", "client", "server", "censor", "probe_interval_ms", "forge_rate_per_s", "base_duration_s",
            "intervention_duration_s", "loss_prob", "delay_ms", "delay_jitter_ms", "seed"});
    SimScenario sc;
    sc.name = o.get<std::string>("name", "scenario" + std::to_string(f.scenarios.size()));
    if (o.has("client")) {
      const Obj c = o.obj("client");
      c.only({"initial_ipid", "ipid_mode", "noise", "rst_response", "icmp_unreachable"});
      sc.client = read_client_model(c);
    }
    if (o.has("server")) {
      const Obj v = o.obj("server");
      v.only({"schedule_offsets_ms", "backlog_timeout_s", "backlog_capacity", "open_port"});
      sc.server = read_server_model(v);
    }
    if (o.has("censor")) sc.censor = read_censor(o.obj("censor"));
    sc.probe_interval_ms = o.get("probe_interval_ms", sc.probe_interval_ms);
    sc.forge_rate_per_s = o.get("forge_rate_per_s", sc.forge_rate_per_s);
    sc.base_duration_s = o.get("base_duration_s", sc.base_duration_s);
    sc.intervention_duration_s = o.get("intervention_duration_s", sc.intervention_duration_s);
    sc.loss_prob = o.get("loss_prob", sc.loss_prob);
    sc.delay_ms = o.get("delay_ms", sc.delay_ms);
    sc.delay_jitter_ms = o.get("delay_jitter_ms", sc.delay_jitter_ms);
    sc.seed = o.get("seed", sc.seed);
    if (sc.forge_rate_per_s > EngineConfig::kMaxForgeRate) {
      o.fail("forge_rate_per_s", "must not exceed " + std::to_string(EngineConfig::kMaxForgeRate));
    }
    o.check([&] { sc.validate(); });
    f.scenarios.push_back(std::move(sc));
  }
  return f;
}

ScenarioFile load_scenario_file(const std::string& path) { return parse_scenario_file(read_file(path), path); }

}  // namespace dropscan
