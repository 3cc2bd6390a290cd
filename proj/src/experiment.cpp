#include "feddrl/experiment.hpp"

#include "feddrl/seeding.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

namespace feddrl::experiment {

namespace {

namespace pt = boost::property_tree;
namespace fs = std::filesystem;

constexpr std::uint64_t kPublicSeriesTag = 6;

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"run", {"mode", "output", "seed", "sigma", "centralized", "baselines"}},
      {"data",
       {"source", "clients", "train_ratio", "paths", "hops", "timestamp_column", "power_column",
        "public_series", "length", "synthetic_seed", "capacity", "offset", "diurnal_amplitude",
        "diurnal_period", "short_amplitude", "short_period", "noise_level", "noise_ar"}},
      {"federation",
       {"client_ratio", "sync_interval", "global_epochs", "local_episodes", "count_download",
        "warm_start_episodes", "workers"}},
      {"ddpg",
       {"gamma", "tau", "minibatch_size", "buffer_capacity", "actor_lr", "critic_lr",
        "noise_sigma", "noise_decay", "actor_hidden", "critic_hidden", "optimizer"}},
      {"env", {"lag_count", "episode_length"}},
      {"arima", {"p", "d", "q", "max_iterations", "tolerance"}},
      {"bpnn",
       {"hidden_layers", "hidden_neurons", "hidden_activation", "optimizer", "learning_rate",
        "epochs", "seed"}},
      {"grid", {"sync_intervals", "client_ratios"}},
      {"load", {"model_bytes", "data_bytes", "sync_intervals"}},
  };
  return keys;
}

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> items;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    const auto comma = std::min(text.find(',', begin), text.size());
    auto item = trim(text.substr(begin, comma - begin));
    if (!item.empty()) items.push_back(std::move(item));
    begin = comma + 1;
  }
  return items;
}

template <typename T>
std::optional<T> parse_number(std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return value;
}

std::optional<bool> parse_bool(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "true" || lower == "yes" || lower == "on" || lower == "1") return true;
  if (lower == "false" || lower == "no" || lower == "off" || lower == "0") return false;
  return std::nullopt;
}

std::optional<Mode> parse_mode(std::string_view text) {
  if (text == "federated") return Mode::federated;
  if (text == "centralized") return Mode::centralized;
  if (text == "baseline") return Mode::baseline;
  if (text == "robustness-grid") return Mode::robustness_grid;
  return std::nullopt;
}

std::optional<nn::OptimizerKind> parse_optimizer(std::string_view text) {
  if (text == "adam") return nn::OptimizerKind::adam;
  if (text == "sgd") return nn::OptimizerKind::sgd;
  return std::nullopt;
}

// Typed access to one INI tree; every failure becomes a diagnostic.
class Reader {
 public:
  Reader(const pt::ptree& tree, std::vector<std::string>& problems)
      : tree_(tree), problems_(problems) {}

  bool has_section(const std::string& section) const {
    return tree_.find(section) != tree_.not_found();
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    const auto sec = tree_.find(section);
    if (sec == tree_.not_found()) return std::nullopt;
    const auto it = sec->second.find(key);
    if (it == sec->second.not_found()) return std::nullopt;
    return trim(it->second.data());
  }

  template <typename T, typename Parse>
  bool read(const std::string& section, const std::string& key, T& out, Parse parse,
            std::string_view expected) {
    const auto text = raw(section, key);
    if (!text) return false;
    const auto value = parse(*text);
    if (!value) {
      problems_.push_back(fmt::format("[{}] {}: '{}' is not {}", section, key, *text, expected));
      return false;
    }
    out = *value;
    return true;
  }

  bool count(const std::string& section, const std::string& key, std::size_t& out) {
    return read(section, key, out, parse_number<std::size_t>, "a non-negative integer");
  }
  bool u64(const std::string& section, const std::string& key, std::uint64_t& out) {
    return read(section, key, out, parse_number<std::uint64_t>, "a non-negative integer");
  }
  bool real(const std::string& section, const std::string& key, double& out) {
    return read(section, key, out, parse_number<double>, "a number");
  }
  bool flag(const std::string& section, const std::string& key, bool& out) {
    return read(section, key, out, parse_bool, "a boolean");
  }
  bool bytes(const std::string& section, const std::string& key, std::optional<std::uint64_t>& out) {
    const auto text = raw(section, key);
    if (!text) return false;
    try {
      out = parse_bytes(*text);
      return true;
    } catch (const Error& e) {
      problems_.push_back(fmt::format("[{}] {}: {}", section, key, e.what()));
      return false;
    }
  }

  template <typename T, typename Parse>
  bool list(const std::string& section, const std::string& key, std::vector<T>& out, Parse parse,
            std::string_view expected) {
    const auto text = raw(section, key);
    if (!text) return false;
    std::vector<T> values;
    for (const auto& item : split_list(*text)) {
      const auto value = parse(item);
      if (!value) {
        problems_.push_back(
            fmt::format("[{}] {}: list item '{}' is not {}", section, key, item, expected));
        return false;
      }
      values.push_back(*value);
    }
    out = std::move(values);
    return true;
  }

  void check_keys() {
    for (const auto& [section, body] : tree_) {
      const auto known = known_keys().find(section);
      if (body.empty() && !body.data().empty()) {
        problems_.push_back(fmt::format("key '{}' appears outside any section", section));
        continue;
      }
      if (known == known_keys().end()) {
        problems_.push_back(fmt::format("unknown section [{}]", section));
        continue;
      }
      for (const auto& [key, value] : body) {
        if (!known->second.contains(key)) {
          problems_.push_back(fmt::format("[{}] unknown key '{}'", section, key));
        }
      }
    }
  }

 private:
  const pt::ptree& tree_;
  std::vector<std::string>& problems_;
};

Manifest parse_manifest(const fs::path& path, std::vector<std::string>& problems) {
  Manifest m;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    problems.push_back(e.what());
    return m;
  }
  Reader r(tree, problems);
  r.check_keys();
  const fs::path base_dir = path.parent_path();
  const auto resolve = [&](const std::string& p) {
    const fs::path candidate(p);
    return candidate.is_absolute() ? candidate : base_dir / candidate;
  };

  if (!r.has_section("run")) problems.push_back("missing section [run]");
  if (const auto mode = r.raw("run", "mode")) {
    if (const auto parsed = parse_mode(*mode)) {
      m.mode = *parsed;
    } else {
      problems.push_back(fmt::format(
          "[run] mode: '{}' is not one of federated, centralized, baseline, robustness-grid", *mode));
    }
  } else {
    problems.push_back("[run] mode is required");
  }
  if (!r.u64("run", "seed", m.seed) && !r.raw("run", "seed")) {
    problems.push_back("[run] seed is required: every run is seeded explicitly");
  }
  if (const auto output = r.raw("run", "output")) m.output = *output;
  r.real("run", "sigma", m.sigma);
  r.flag("run", "centralized", m.with_centralized);
  r.list("run", "baselines", m.baselines,
         [](const std::string& s) { return std::optional<std::string>(s); }, "a method name");

  if (const auto source = r.raw("data", "source")) {
    if (*source == "synthetic") {
      m.data.source = DataSource::synthetic;
    } else if (*source == "csv") {
      m.data.source = DataSource::csv;
    } else {
      problems.push_back(fmt::format("[data] source: '{}' is not synthetic or csv", *source));
    }
  }
  r.count("data", "clients", m.data.clients);
  r.real("data", "train_ratio", m.data.train_ratio);
  std::vector<std::string> paths;
  if (r.list("data", "paths", paths,
             [](const std::string& s) { return std::optional<std::string>(s); }, "a path")) {
    for (const auto& p : paths) m.data.paths.push_back(resolve(p));
  }
  r.list("data", "hops", m.data.hops, parse_number<std::uint32_t>, "a positive integer");
  if (const auto c = r.raw("data", "timestamp_column")) m.data.columns.timestamp = *c;
  if (const auto c = r.raw("data", "power_column")) m.data.columns.power = *c;
  if (const auto pub = r.raw("data", "public_series")) {
    m.data.public_series = (*pub == "synthetic" || *pub == "none") ? *pub : resolve(*pub).string();
  }
  auto& syn = m.data.synthetic;
  r.count("data", "length", syn.length);
  std::uint64_t synthetic_seed = 0;
  if (r.u64("data", "synthetic_seed", synthetic_seed)) m.data.synthetic_seed = synthetic_seed;
  r.real("data", "capacity", syn.capacity);
  r.real("data", "offset", syn.offset);
  r.real("data", "diurnal_amplitude", syn.diurnal_amplitude);
  r.real("data", "diurnal_period", syn.diurnal_period);
  r.real("data", "short_amplitude", syn.short_amplitude);
  r.real("data", "short_period", syn.short_period);
  r.real("data", "noise_level", syn.noise_level);
  r.real("data", "noise_ar", syn.noise_ar);
  if (m.data.source == DataSource::csv) m.data.clients = m.data.paths.size();

  const bool needs_federation = m.mode != Mode::baseline;
  if (needs_federation && !r.has_section("federation")) {
    problems.push_back(
        fmt::format("mode {} requires a [federation] section with at least one key", to_string(m.mode)));
  }
  r.real("federation", "client_ratio", m.fed.client_ratio);
  r.count("federation", "sync_interval", m.fed.sync_interval);
  r.count("federation", "global_epochs", m.fed.global_epochs);
  r.count("federation", "local_episodes", m.fed.local_episodes);
  r.flag("federation", "count_download", m.fed.count_download);
  r.count("federation", "warm_start_episodes", m.warm_start_episodes);
  r.count("federation", "workers", m.fed.workers);

  auto& d = m.ddpg;
  r.real("ddpg", "gamma", d.gamma);
  r.real("ddpg", "tau", d.tau);
  r.count("ddpg", "minibatch_size", d.minibatch_size);
  r.count("ddpg", "buffer_capacity", d.buffer_capacity);
  r.real("ddpg", "actor_lr", d.actor_lr);
  r.real("ddpg", "critic_lr", d.critic_lr);
  r.real("ddpg", "noise_sigma", d.noise_sigma_initial);
  r.real("ddpg", "noise_decay", d.noise_sigma_decay);
  r.count("ddpg", "actor_hidden", d.actor_hidden);
  r.count("ddpg", "critic_hidden", d.critic_hidden);
  r.read("ddpg", "optimizer", d.optimizer, parse_optimizer, "adam or sgd");

  r.count("env", "lag_count", m.env.lag_count);
  r.count("env", "episode_length", m.env.episode_length);

  r.count("arima", "p", m.arima.p);
  r.count("arima", "d", m.arima.d);
  r.count("arima", "q", m.arima.q);
  r.count("arima", "max_iterations", m.arima.max_iterations);
  r.real("arima", "tolerance", m.arima.tolerance);

  auto& b = m.bpnn;
  r.count("bpnn", "hidden_layers", b.hidden_layers);
  r.count("bpnn", "hidden_neurons", b.hidden_neurons);
  r.read("bpnn", "hidden_activation", b.hidden_activation,
         [](const std::string& s) -> std::optional<nn::Activation> {
           try {
             return nn::activation_from_string(s);
           } catch (const Error&) {
             return std::nullopt;
           }
         },
         "relu, sigmoid or linear");
  r.read("bpnn", "optimizer", b.optimizer, parse_optimizer, "adam or sgd");
  r.real("bpnn", "learning_rate", b.learning_rate);
  r.count("bpnn", "epochs", b.epochs);
  r.u64("bpnn", "seed", b.seed);
  b.lag_count = m.env.lag_count;

  if (m.mode == Mode::robustness_grid && !r.has_section("grid")) {
    problems.push_back("mode robustness-grid requires a [grid] section with at least one key");
  }
  r.list("grid", "sync_intervals", m.grid.sync_intervals, parse_number<std::size_t>,
         "a positive integer");
  r.list("grid", "client_ratios", m.grid.client_ratios, parse_number<double>, "a number");

  r.bytes("load", "model_bytes", m.load.model_bytes);
  r.bytes("load", "data_bytes", m.load.data_bytes);
  r.list("load", "sync_intervals", m.load.sync_intervals, parse_number<std::size_t>,
         "a positive integer");

  m.fed.num_clients = m.data.clients;
  m.fed.master_seed = m.seed;
  return m;
}

template <typename Config>
void collect(std::vector<std::string>& problems, std::string_view section, const Config& config) {
  try {
    config.validate();
  } catch (const Error& e) {
    problems.push_back(fmt::format("[{}] {}", section, e.what()));
  }
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& line : lines) {
    if (!out.empty()) out += '\n';
    out += line;
  }
  return out;
}

data::SyntheticConfig synthetic_base(const Manifest& m) {
  auto base = m.data.synthetic;
  base.seed = m.data.synthetic_seed.value_or(m.seed);
  return base;
}

std::uint64_t model_bytes_for(const Manifest& m) {
  return m.load.model_bytes.value_or(fed::agent_payload_bytes(m.ddpg, m.env.lag_count));
}

fed::FedConfig fed_config(const Manifest& m, std::size_t clients) {
  auto config = m.fed;
  config.num_clients = clients;
  config.master_seed = m.seed;
  return config;
}

std::string format_ratio(double ratio) { return fmt::format("{}", ratio); }

std::string grid_method(std::size_t k, double e) {
  return fmt::format("federated-K{}-E{}", k, format_ratio(e));
}

void append_method(ClientPredictions& target, std::string method, std::vector<double> values) {
  target.methods.push_back({std::move(method), std::move(values)});
}

// Open for writing or throw; report files are small, so plain streams suffice.
std::ofstream open_report(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  return out;
}

void write_journal(const fed::FedRunState& state, const fs::path& path) {
  auto out = open_report(path);
  out << "epoch,selected,mean_reward,synced,uploaded_bytes,downloaded_bytes\n";
  for (const auto& rec : state.journal) {
    out << fmt::format("{},{},{},{},{},{}\n", rec.epoch, fmt::join(rec.selected, ";"),
                       rec.mean_reward, rec.synced ? 1 : 0, rec.uploaded_bytes,
                       rec.downloaded_bytes);
  }
}

}  // namespace

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::federated: return "federated";
    case Mode::centralized: return "centralized";
    case Mode::baseline: return "baseline";
    case Mode::robustness_grid: return "robustness-grid";
  }
  return "unknown";
}

std::uint64_t parse_bytes(std::string_view text) {
  const auto trimmed = trim(text);
  const auto unit_at = trimmed.find_first_not_of("0123456789.eE+-");
  const std::string number = trim(trimmed.substr(0, unit_at));
  std::string unit = unit_at == std::string::npos ? "" : trim(trimmed.substr(unit_at));
  std::transform(unit.begin(), unit.end(), unit.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  static const std::map<std::string, double> scale{
      {"", 1.0},         {"B", 1.0},          {"KB", 1e3},         {"MB", 1e6},
      {"GB", 1e9},       {"KIB", 1024.0},     {"MIB", 1048576.0}, {"GIB", 1073741824.0}};
  const auto factor = scale.find(unit);
  const auto value = parse_number<double>(number);
  if (!value || factor == scale.end()) {
    throw DomainError(fmt::format("'{}' is not a byte size such as 40000, 40KB or 4MB", trimmed));
  }
  const double bytes = *value * factor->second;
  if (!std::isfinite(bytes) || bytes < 0.0 || bytes != std::floor(bytes)) {
    throw DomainError(fmt::format("'{}' is not a whole non-negative byte count", trimmed));
  }
  return static_cast<std::uint64_t>(bytes);
}

std::vector<std::size_t> load_sync_intervals(const LoadSpec& load, const fed::FedConfig& config) {
  if (!load.sync_intervals.empty()) return load.sync_intervals;
  std::set<std::size_t> ks{config.sync_interval};
  for (const std::size_t k : {50, 100, 200}) {
    if (k <= config.global_epochs) ks.insert(k);
  }
  return {ks.begin(), ks.end()};
}

std::vector<std::string> check_manifest(const Manifest& m) {
  std::vector<std::string> problems;
  const auto& fc = m.fed;
  if (fc.sync_interval > fc.global_epochs) {
    problems.push_back(fmt::format(
        "[federation] sync_interval K={} exceeds global_epochs W={}: K must not exceed W",
        fc.sync_interval, fc.global_epochs));
  } else {
    collect(problems, "federation", fed_config(m, std::max<std::size_t>(m.data.clients, 1)));
  }
  if (m.data.clients == 0) {
    problems.push_back(m.data.source == DataSource::csv ? "[data] paths lists no client series"
                                                        : "[data] clients must be positive");
  }
  if (!m.data.hops.empty() && m.data.hops.size() != m.data.clients) {
    problems.push_back(fmt::format("[data] hops lists {} values for {} clients", m.data.hops.size(),
                                   m.data.clients));
  }
  for (const auto h : m.data.hops) {
    if (h == 0) problems.push_back("[data] hops must be positive");
  }
  if (!(m.data.train_ratio > 0.0 && m.data.train_ratio < 1.0)) {
    problems.push_back("[data] train_ratio must lie in (0,1)");
  }
  if (m.data.source == DataSource::synthetic && m.data.synthetic.length < 500) {
    problems.push_back("[data] synthetic length must be at least 500");
  }
  if (!(m.sigma > 0.0)) problems.push_back("[run] sigma must be positive");
  for (const auto& name : m.baselines) {
    if (name != "persistence" && name != "arima" && name != "bpnn") {
      problems.push_back(fmt::format("[run] baselines: unknown method '{}'", name));
    }
  }
  if (m.mode == Mode::baseline && m.baselines.empty()) {
    problems.push_back("mode baseline requires [run] baselines to name at least one method");
  }
  collect(problems, "ddpg", m.ddpg);
  collect(problems, "env", m.env);
  collect(problems, "arima", m.arima);
  collect(problems, "bpnn", m.bpnn);
  if (m.mode == Mode::robustness_grid) {
    if (m.grid.sync_intervals.empty() || m.grid.client_ratios.empty()) {
      problems.push_back("[grid] needs at least one sync interval and one client ratio");
    }
    for (const auto k : m.grid.sync_intervals) {
      if (k == 0 || k > fc.global_epochs) {
        problems.push_back(fmt::format(
            "[grid] sync_intervals: K={} must lie in [1, W={}]", k, fc.global_epochs));
      }
    }
    for (const auto e : m.grid.client_ratios) {
      if (!(e > 0.0 && e <= 1.0)) {
        problems.push_back(fmt::format("[grid] client_ratios: E={} must lie in (0,1]", e));
      }
    }
  }
  for (const auto k : m.load.sync_intervals) {
    if (k == 0 || k > fc.global_epochs) {
      problems.push_back(
          fmt::format("[load] sync_intervals: K={} must lie in [1, W={}]", k, fc.global_epochs));
    }
  }
  return problems;
}

Manifest load_manifest(const fs::path& path) {
  std::vector<std::string> problems;
  auto manifest = parse_manifest(path, problems);
  if (problems.empty()) problems = check_manifest(manifest);
  if (!problems.empty()) throw ManifestError(join_lines(problems));
  return manifest;
}

Diagnostics validate_manifest(const fs::path& path) {
  Diagnostics diag;
  try {
    const auto m = parse_manifest(path, diag.problems);
    if (!diag.problems.empty()) return diag;
    diag.problems = check_manifest(m);
    if (!diag.problems.empty()) return diag;

    diag.model_bytes = model_bytes_for(m);
    for (std::size_t n = 0; n < m.data.clients; ++n) {
      if (m.load.data_bytes) {
        diag.data_bytes.push_back(*m.load.data_bytes);
      } else if (m.data.source == DataSource::synthetic) {
        diag.data_bytes.push_back(16 * static_cast<std::uint64_t>(m.data.synthetic.length));
      } else {
        const auto series = data::load_csv(m.data.paths[n], m.data.columns);
        diag.data_bytes.push_back(16 * static_cast<std::uint64_t>(series.size()));
      }
    }
    fed::LoadModel model{diag.model_bytes, diag.data_bytes, m.data.hops};
    if (model.hops.empty()) model.hops.assign(m.data.clients, 1);
    diag.load_estimate = fed::compute_load_gain(model, fed_config(m, m.data.clients));
  } catch (const std::exception& e) {
    diag.problems.push_back(e.what());
  }
  return diag;
}

Inputs prepare_inputs(const Manifest& m) {
  Inputs inputs;
  const auto base = synthetic_base(m);
  std::set<std::string> names;
  for (std::size_t n = 0; n < m.data.clients; ++n) {
    data::TimeSeries series;
    if (m.data.source == DataSource::synthetic) {
      series = data::generate_synthetic(data::client_synthetic_config(base, n));
    } else {
      series = data::load_csv(m.data.paths[n], m.data.columns);
      series.name = m.data.paths[n].stem().string();
    }
    series.validate();
    if (!names.insert(series.name).second) {
      series.name = fmt::format("{}-{}", series.name, n);
      names.insert(series.name);
    }
    const auto parts = data::split(series, m.data.train_ratio, m.env.lag_count);
    const std::uint32_t hops = m.data.hops.empty() ? 1 : m.data.hops[n];
    inputs.datasets.push_back({std::move(series), parts.train.size(), hops});
  }
  if (m.data.public_series == "synthetic") {
    auto pub = base;
    pub.seed = derive_seed(base.seed, {kPublicSeriesTag});
    pub.name = "public";
    inputs.public_series = data::generate_synthetic(data::client_synthetic_config(pub, 0));
  } else if (m.data.public_series != "none") {
    inputs.public_series = data::load_csv(m.data.public_series, m.data.columns);
    inputs.public_series->validate();
  }
  return inputs;
}

double Result::mean_nmae(std::string_view method) const {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& row : metrics) {
    if (row.method == method) {
      sum += row.nmae;
      ++count;
    }
  }
  if (count == 0) throw StateError(fmt::format("no metrics for method '{}'", method));
  return sum / static_cast<double>(count);
}

Convergence assess_convergence(std::span<const double> trace, double fraction) {
  if (trace.empty()) throw RangeError("empty reward trace");
  const std::size_t quarter = std::max<std::size_t>(1, trace.size() / 4);
  const auto initial = trace.first(quarter);
  const auto final = trace.last(quarter);
  Convergence c;
  c.worst_initial = *std::min_element(initial.begin(), initial.end());
  double mean = 0.0;
  for (const double v : final) mean += v;
  mean /= static_cast<double>(final.size());
  double var = 0.0;
  for (const double v : final) var += (v - mean) * (v - mean);
  c.final_quarter_std = std::sqrt(var / static_cast<double>(final.size()));
  c.converged = c.final_quarter_std < fraction * std::abs(c.worst_initial);
  return c;
}

Result run(const Manifest& manifest, const Progress& progress) {
  if (const auto problems = check_manifest(manifest); !problems.empty()) {
    throw ManifestError(join_lines(problems));
  }
  const auto say = [&](const std::string& message) {
    if (progress) progress(message);
  };
  Result result;
  result.manifest = manifest;
  const auto inputs = prepare_inputs(manifest);
  const auto& datasets = inputs.datasets;
  const auto config = fed_config(manifest, datasets.size());
  say(fmt::format("{} clients, mode {}", datasets.size(), to_string(manifest.mode)));

  for (const auto& ds : datasets) {
    ClientPredictions p;
    p.client = ds.series.name;
    p.step_seconds = ds.series.sampling_interval.count();
    p.first_target_unix_seconds =
        ds.series.origin_unix_seconds + static_cast<std::int64_t>(ds.train_length) * p.step_seconds;
    p.actual = fed::persistence_test(ds).actual;
    result.predictions.push_back(std::move(p));
  }
  const auto record = [&](const std::string& method, std::size_t n, const fed::Forecast& f) {
    const auto s = fed::score(datasets[n].series.name, f);
    result.metrics.push_back({method, s.client, s.nmae, s.nrmse});
    append_method(result.predictions[n], method, f.predicted);
  };

  const bool needs_agent = manifest.mode != Mode::baseline;
  ddpg::AgentParams initial;
  if (needs_agent) {
    if (inputs.public_series && manifest.warm_start_episodes > 0) {
      say(fmt::format("warm start: {} episodes on the public series",
                      manifest.warm_start_episodes));
      initial = fed::init_global(*inputs.public_series, manifest.env, manifest.ddpg, manifest.seed,
                                 manifest.warm_start_episodes)
                    .export_params();
    } else {
      initial = ddpg::DdpgAgent(manifest.ddpg, manifest.env.lag_count,
                                fed::global_init_seed(manifest.seed))
                    .export_params();
    }
  }

  if (manifest.mode == Mode::federated) {
    say(fmt::format("federated training: W={} K={} E={} M={}", config.global_epochs,
                    config.sync_interval, config.client_ratio, config.local_episodes));
    auto clients = fed::make_clients(datasets, manifest.env, manifest.ddpg, manifest.seed);
    auto fr = fed::run_federated(clients, config, initial);
    for (std::size_t n = 0; n < clients.size(); ++n) {
      record("federated", n, clients[n].forecast(fr.global.actor));
    }
    result.federated_state = std::move(fr.state);
  }

  if (manifest.mode == Mode::centralized ||
      (manifest.mode == Mode::federated && manifest.with_centralized)) {
    say("centralized training on the pooled series");
    const auto cr = fed::run_centralized(datasets, manifest.env, manifest.ddpg, config, initial);
    for (std::size_t n = 0; n < datasets.size(); ++n) {
      record("centralized", n,
             fed::forecast_test(cr.params.actor, datasets[n], fed::env_for(datasets[n], manifest.env)));
    }
    result.centralized_trace = cr.reward_trace;
  }

  if (result.federated_state && !result.centralized_trace.empty()) {
    Equivalence eq;
    eq.centralized = result.mean_nmae("centralized");
    eq.federated = result.mean_nmae("federated");
    eq.sigma = manifest.sigma;
    eq.pass = data::equivalence_check(eq.centralized, eq.federated, eq.sigma);
    result.equivalence = eq;
  }

  if (manifest.mode == Mode::robustness_grid) {
    for (const auto k : manifest.grid.sync_intervals) {
      for (const auto e : manifest.grid.client_ratios) {
        say(fmt::format("grid cell K={} E={}", k, format_ratio(e)));
        auto cell_config = config;
        cell_config.sync_interval = k;
        cell_config.client_ratio = e;
        auto clients = fed::make_clients(datasets, manifest.env, manifest.ddpg, manifest.seed);
        auto fr = fed::run_federated(clients, cell_config, initial);
        const auto method = grid_method(k, e);
        for (std::size_t n = 0; n < clients.size(); ++n) {
          record(method, n, clients[n].forecast(fr.global.actor));
        }
        GridCell cell;
        cell.sync_interval = k;
        cell.client_ratio = e;
        const auto trace = fr.state.reward_trace();
        const auto conv = assess_convergence(trace);
        cell.final_nmae = result.mean_nmae(method);
        cell.final_quarter_std = conv.final_quarter_std;
        cell.worst_initial = conv.worst_initial;
        cell.converged = conv.converged;
        cell.state = std::move(fr.state);
        result.grid.push_back(std::move(cell));
      }
    }
  }

  for (const auto& name : manifest.baselines) {
    say(fmt::format("baseline {}", name));
    for (std::size_t n = 0; n < datasets.size(); ++n) {
      const auto& ds = datasets[n];
      const auto& values = ds.series.values;
      const std::span<const double> train(values.data(), ds.train_length);
      const auto range = env::targets_from(ds.train_length, values.size());
      fed::Forecast f{env::range_actuals(values, range), {}};
      if (name == "persistence") {
        f.predicted = baselines::persistence_forecast(values, range);
      } else if (name == "arima") {
        baselines::ArimaModel model;
        try {
          model = baselines::arima_fit(train, manifest.arima);
        } catch (const baselines::ArimaFitError& e) {
          result.warnings.push_back(fmt::format("arima on {}: {}; using the best fit found",
                                                ds.series.name, e.what()));
          model = e.best_so_far();
        }
        f.predicted = baselines::arima_forecast(model, values, range);
      } else {
        auto bpnn = manifest.bpnn;
        bpnn.lag_count = manifest.env.lag_count;
        f.predicted = baselines::bpnn_forecast(baselines::bpnn_train(train, bpnn), values, range);
      }
      record(name, n, f);
    }
  }

  fed::LoadModel load{model_bytes_for(manifest), {}, {}};
  for (const auto& ds : datasets) {
    load.data_bytes.push_back(manifest.load.data_bytes.value_or(ds.data_bytes()));
    load.hops.push_back(ds.hops);
  }
  for (const auto k : load_sync_intervals(manifest.load, config)) {
    auto k_config = config;
    k_config.sync_interval = k;
    result.load_gain.emplace_back(k, fed::compute_load_gain(load, k_config));
  }
  return result;
}

void write_reports(const Result& result, const fs::path& directory) {
  fs::create_directories(directory / "predictions");

  if (result.federated_state) write_journal(*result.federated_state, directory / "journal.csv");
  if (!result.centralized_trace.empty()) {
    auto out = open_report(directory / "centralized_journal.csv");
    out << "epoch,mean_reward\n";
    for (std::size_t w = 0; w < result.centralized_trace.size(); ++w) {
      out << fmt::format("{},{}\n", w + 1, result.centralized_trace[w]);
    }
  }

  for (const auto& p : result.predictions) {
    auto out = open_report(directory / "predictions" / (p.client + ".csv"));
    out << "timestamp,actual";
    for (const auto& m : p.methods) out << ',' << m.method;
    out << '\n';
    for (std::size_t i = 0; i < p.actual.size(); ++i) {
      const auto ts = p.first_target_unix_seconds + static_cast<std::int64_t>(i) * p.step_seconds;
      out << fmt::format("{},{}", data::format_iso8601(ts), p.actual[i]);
      for (const auto& m : p.methods) out << fmt::format(",{}", m.values[i]);
      out << '\n';
    }
  }

  {
    auto out = open_report(directory / "metrics.csv");
    out << "method,client,nmae,nrmse\n";
    for (const auto& row : result.metrics) {
      out << fmt::format("{},{},{},{}\n", row.method, row.client, row.nmae, row.nrmse);
    }
  }

  {
    auto out = open_report(directory / "load_gain.csv");
    out << "sync_interval,sync_rounds,centralized_load,federated_load,gain\n";
    for (const auto& [k, g] : result.load_gain) {
      out << fmt::format("{},{},{},{},{}\n", k, g.sync_rounds, g.centralized, g.federated, g.gain);
    }
  }

  if (!result.grid.empty()) {
    auto out = open_report(directory / "grid_comparison.csv");
    out << "sync_interval,client_ratio,final_nmae,final_quarter_reward_std,worst_initial_reward,"
           "converged\n";
    for (const auto& cell : result.grid) {
      const auto cell_dir = directory / "grid" /
                            fmt::format("K{}_E{}", cell.sync_interval, format_ratio(cell.client_ratio));
      fs::create_directories(cell_dir);
      write_journal(cell.state, cell_dir / "journal.csv");
      out << fmt::format("{},{},{},{},{},{}\n", cell.sync_interval, format_ratio(cell.client_ratio),
                         cell.final_nmae, cell.final_quarter_std, cell.worst_initial,
                         cell.converged ? 1 : 0);
    }
  }

  nlohmann::ordered_json summary;
  const auto& m = result.manifest;
  summary["mode"] = std::string(to_string(m.mode));
  summary["seed"] = m.seed;
  summary["clients"] = result.predictions.size();
  auto methods = nlohmann::ordered_json::object();
  for (const auto& row : result.metrics) {
    if (methods.contains(row.method)) continue;
    double nmae = 0.0;
    double nrmse = 0.0;
    std::size_t count = 0;
    for (const auto& other : result.metrics) {
      if (other.method != row.method) continue;
      nmae += other.nmae;
      nrmse += other.nrmse;
      ++count;
    }
    methods[row.method] = {{"mean_nmae", nmae / static_cast<double>(count)},
                           {"mean_nrmse", nrmse / static_cast<double>(count)}};
  }
  summary["methods"] = methods;
  if (result.equivalence) {
    const auto& eq = *result.equivalence;
    summary["equivalence"] = {{"centralized_nmae", eq.centralized},
                              {"federated_nmae", eq.federated},
                              {"sigma", eq.sigma},
                              {"pass", eq.pass}};
  }
  auto load = nlohmann::ordered_json::array();
  for (const auto& [k, g] : result.load_gain) {
    load.push_back({{"sync_interval", k},
                    {"centralized_load", g.centralized},
                    {"federated_load", g.federated},
                    {"gain", g.gain}});
  }
  summary["load_gain"] = load;
  if (!result.grid.empty()) {
    double lo = result.grid.front().final_nmae;
    double hi = lo;
    bool all = true;
    for (const auto& cell : result.grid) {
      lo = std::min(lo, cell.final_nmae);
      hi = std::max(hi, cell.final_nmae);
      all = all && cell.converged;
    }
    summary["grid"] = {{"cells", result.grid.size()}, {"all_converged", all}, {"nmae_spread", hi - lo}};
  }
  summary["warnings"] = result.warnings;
  auto out = open_report(directory / "summary.json");
  out << summary.dump(2) << '\n';
}

}  // namespace feddrl::experiment
