#include "doctest.h"
#include "oracles.hpp"

#include "feddrl/data.hpp"
#include "feddrl/errors.hpp"
#include "feddrl/fed.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <type_traits>

using namespace feddrl;
using fed::FedConfig;

namespace {

env::EnvConfig small_env() {
  env::EnvConfig e;
  e.lag_count = 7;
  e.episode_length = 16;
  return e;
}

ddpg::DdpgConfig small_ddpg() {
  ddpg::DdpgConfig c;
  c.actor_hidden = 8;
  c.critic_hidden = 8;
  c.minibatch_size = 8;
  c.buffer_capacity = 500;
  return c;
}

fed::Dataset synthetic_dataset(std::size_t index, std::size_t length = 600) {
  data::SyntheticConfig base;
  base.length = length;
  auto series = data::generate_synthetic(data::client_synthetic_config(base, index));
  const auto train = static_cast<std::size_t>(0.8 * static_cast<double>(length));
  return {std::move(series), train, 1};
}

std::vector<fed::Dataset> datasets(std::size_t n) {
  std::vector<fed::Dataset> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(synthetic_dataset(k));
  return out;
}

FedConfig small_fed(std::size_t n, std::size_t w, std::size_t k) {
  FedConfig c;
  c.num_clients = n;
  c.global_epochs = w;
  c.sync_interval = k;
  c.local_episodes = 1;
  c.master_seed = 7;
  return c;
}

ddpg::AgentParams initial_global(std::uint64_t seed = 7) {
  return ddpg::DdpgAgent(small_ddpg(), 7, fed::global_init_seed(seed)).export_params();
}

ddpg::AgentParams random_params(std::mt19937_64& rng) {
  const auto actor = ddpg::actor_layout(7, 8);
  const auto critic = ddpg::critic_layout(7, 8);
  return {nn::NetworkParams::glorot_uniform(actor, rng), nn::NetworkParams::glorot_uniform(actor, rng),
          nn::NetworkParams::glorot_uniform(critic, rng),
          nn::NetworkParams::glorot_uniform(critic, rng)};
}

std::vector<double> flat_all(const ddpg::AgentParams& p) {
  std::vector<double> out;
  for (const auto* net : {&p.actor, &p.actor_target, &p.critic, &p.critic_target}) {
    const auto f = net->flatten();
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

}  // namespace

TEST_CASE("select_clients: size, order, reproducibility") {
  FedConfig c;
  c.num_clients = 10;
  c.client_ratio = 0.3;
  CHECK(c.clients_per_epoch() == 3);
  std::set<std::vector<std::size_t>> distinct;
  for (std::size_t epoch = 1; epoch <= 30; ++epoch) {
    const auto s = fed::select_clients(c, epoch);
    REQUIRE(s.size() == 3);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
    CHECK(s.back() < 10);
    CHECK(s == fed::select_clients(c, epoch));
    distinct.insert(s);
  }
  CHECK(distinct.size() > 10);
  c.client_ratio = 1.0;
  CHECK(fed::select_clients(c, 4) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  c.num_clients = 4;
  c.client_ratio = 0.3;
  CHECK(c.clients_per_epoch() == 2);
}

TEST_CASE("select_clients: every client is picked about equally often") {
  FedConfig c;
  c.num_clients = 4;
  c.client_ratio = 0.5;
  std::vector<int> hits(4, 0);
  for (std::size_t epoch = 1; epoch <= 4000; ++epoch) {
    for (const auto id : fed::select_clients(c, epoch)) ++hits[id];
  }
  for (const int h : hits) CHECK(std::abs(h - 2000) < 150);
}

TEST_CASE("config validation") {
  FedConfig c;
  c.global_epochs = 50;
  c.sync_interval = 100;
  CHECK_THROWS_AS(c.validate(), DomainError);
  c.sync_interval = 50;
  CHECK_NOTHROW(c.validate());
  c.client_ratio = 0.0;
  CHECK_THROWS_AS(c.validate(), DomainError);
  c.client_ratio = 1.5;
  CHECK_THROWS_AS(c.validate(), DomainError);
}

TEST_CASE("aggregate: single upload is returned unchanged") {
  std::mt19937_64 rng(1);
  const auto p = random_params(rng);
  CHECK(fed::aggregate(std::vector{p}) == p);
}

TEST_CASE("aggregate: identical uploads are returned bit-exactly") {
  std::mt19937_64 rng(2);
  const auto p = random_params(rng);
  for (std::size_t k = 2; k <= 9; ++k) CHECK(fed::aggregate(std::vector(k, p)) == p);
}

TEST_CASE("aggregate: P and -P average to zeros") {
  std::mt19937_64 rng(3);
  const auto p = random_params(rng);
  auto neg = p;
  for (auto* net : {&neg.actor, &neg.actor_target, &neg.critic, &neg.critic_target}) *net *= -1.0;
  const auto mean = fed::aggregate(std::vector{p, neg});
  for (const double v : flat_all(mean)) CHECK(v == 0.0);
}

TEST_CASE("aggregate: ten random uploads match an element-wise mean") {
  std::mt19937_64 rng(4);
  std::vector<ddpg::AgentParams> uploads;
  std::vector<std::vector<double>> flats;
  for (int k = 0; k < 10; ++k) {
    uploads.push_back(random_params(rng));
    flats.push_back(flat_all(uploads.back()));
  }
  const auto mean = flat_all(fed::aggregate(uploads));
  const auto expected = oracle::elementwise_mean(flats);
  double worst = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) worst = std::max(worst, std::abs(mean[i] - expected[i]));
  CHECK(worst < 1e-12);

  auto reversed = uploads;
  std::reverse(reversed.begin(), reversed.end());
  const auto back = flat_all(fed::aggregate(reversed));
  worst = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) worst = std::max(worst, std::abs(mean[i] - back[i]));
  CHECK(worst < 1e-12);
  CHECK(fed::aggregate(uploads) == fed::aggregate(uploads));
}

TEST_CASE("aggregate: empty or mismatched uploads are protocol errors") {
  std::mt19937_64 rng(5);
  CHECK_THROWS_AS(fed::aggregate(std::vector<ddpg::AgentParams>{}), ProtocolError);
  auto odd = random_params(rng);
  odd.critic = nn::NetworkParams::glorot_uniform(ddpg::critic_layout(7, 9), rng);
  CHECK_THROWS_AS(fed::aggregate(std::vector{random_params(rng), odd}), ProtocolError);
  fed::Server server(random_params(rng));
  CHECK_THROWS_AS(server.aggregate(std::vector{fed::pack(odd)}), ProtocolError);
  CHECK_THROWS_AS(server.aggregate(std::vector<fed::ParamPayload>{}), ProtocolError);
}

TEST_CASE("server averages payloads") {
  std::mt19937_64 rng(6);
  const auto a = random_params(rng);
  const auto b = random_params(rng);
  fed::Server server(a);
  server.aggregate(std::vector{fed::pack(a), fed::pack(b)});
  CHECK(server.global() == fed::aggregate(std::vector{a, b}));
  CHECK(fed::unpack(server.broadcast()) == server.global());
}

TEST_CASE("server accepts only parameter payloads") {
  using Span = std::span<const fed::ParamPayload>;
  static_assert(std::is_invocable_v<decltype(&fed::Server::aggregate), fed::Server&, Span>);
  static_assert(!std::is_invocable_v<decltype(&fed::Server::aggregate), fed::Server&,
                                     std::span<const double>>);
  static_assert(!std::is_invocable_v<decltype(&fed::Server::aggregate), fed::Server&,
                                     std::span<const data::TimeSeries>>);
  static_assert(!std::is_constructible_v<fed::Server, data::TimeSeries>);
  CHECK(true);
}

TEST_CASE("load gain: hand example") {
  FedConfig c;
  c.num_clients = 4;
  c.global_epochs = 200;
  c.sync_interval = 100;
  const fed::LoadModel model{10000, {1000000, 1000000, 1000000, 1000000}, {1, 1, 1, 1}};
  const auto g = fed::compute_load_gain(model, c);
  CHECK(g.centralized == 4e6);
  CHECK(g.sync_rounds == 2);
  CHECK(g.federated == 1.6e5);
  CHECK(g.gain == 0.96);
}

TEST_CASE("load gain: equal loads give zero gain") {
  FedConfig c;
  c.num_clients = 1;
  c.global_epochs = 1;
  c.sync_interval = 1;
  // L_F = I * (1 up + 1 down) = 2I
  const auto g = fed::compute_load_gain({500, {1000}, {1}}, c);
  CHECK(g.federated == g.centralized);
  CHECK(g.gain == 0.0);
}

TEST_CASE("load gain: strictly increasing in K") {
  FedConfig c;
  c.num_clients = 4;
  c.global_epochs = 200;
  const fed::LoadModel model{40000, {4000000, 4000000, 4000000, 4000000}, {1, 2, 3, 1}};
  double previous = -1e300;
  for (const std::size_t k : {1, 2, 5, 10, 25, 50, 100, 200}) {
    c.sync_interval = k;
    const double u = fed::compute_load_gain(model, c).gain;
    CHECK(u > previous);
    previous = u;
  }
}

TEST_CASE("load gain: hops weight both loads and downloads can be excluded") {
  FedConfig c;
  c.num_clients = 2;
  c.global_epochs = 10;
  c.sync_interval = 5;
  const fed::LoadModel model{100, {1000, 3000}, {2, 1}};
  auto g = fed::compute_load_gain(model, c);
  CHECK(g.centralized == 5000.0);
  CHECK(g.federated == 100.0 * 2 * (3 + 3));
  c.count_download = false;
  g = fed::compute_load_gain(model, c);
  CHECK(g.federated == 100.0 * 2 * 3);
  CHECK_THROWS_AS(fed::compute_load_gain({100, {0, 0}, {1, 1}}, c), DomainError);
}

TEST_CASE("payload size matches the declared model size") {
  ddpg::DdpgAgent agent(small_ddpg(), 7, 1);
  CHECK(fed::pack(agent.export_params()).bytes.size() == fed::agent_payload_bytes(small_ddpg(), 7));
}

TEST_CASE("init_global: seeded, optional warm start") {
  const auto pub = synthetic_dataset(99).series;
  const auto a = fed::init_global(pub, small_env(), small_ddpg(), 3, 0);
  const auto b = fed::init_global(pub, small_env(), small_ddpg(), 3, 0);
  CHECK(a.export_params() == b.export_params());
  CHECK(a.export_params() ==
        ddpg::DdpgAgent(small_ddpg(), 7, fed::global_init_seed(3)).export_params());
  CHECK_FALSE(a.export_params() == fed::init_global(pub, small_env(), small_ddpg(), 4, 0).export_params());

  data::TimeSeries tiny{{1.0, 2.0, 3.0}};
  CHECK_THROWS_AS(fed::init_global(tiny, small_env(), small_ddpg(), 3, 1), DataError);
}

TEST_CASE("init_global: warm start improves on the untrained model") {
  data::SyntheticConfig sc;
  sc.length = 2000;
  sc.seed = 1234;
  const auto pub = data::generate_synthetic(sc);
  const fed::Dataset ds{pub, pub.size(), 1};
  auto env_cfg = small_env();
  env_cfg.episode_length = 48;
  const auto cold = fed::init_global(pub, env_cfg, ddpg::DdpgConfig{}, 5, 0);
  const auto warm = fed::init_global(pub, env_cfg, ddpg::DdpgConfig{}, 5, 100);
  const auto range = env::targets_from(7, pub.size());
  const auto e = fed::env_for(ds, env_cfg);
  const auto actual = env::range_actuals(pub.values, range);
  const double cold_nmae =
      data::nmae({actual, env::rollout_forecast(cold.actor(), pub.values, e, range), std::nullopt});
  const double warm_nmae =
      data::nmae({actual, env::rollout_forecast(warm.actor(), pub.values, e, range), std::nullopt});
  INFO("cold " << cold_nmae << " warm " << warm_nmae);
  CHECK(warm_nmae < cold_nmae);
}

TEST_CASE("run_federated: single client matches centralized training bit for bit") {
  auto ds = datasets(1);
  const auto cfg = [] {
    auto c = small_fed(1, 6, 1);
    c.local_episodes = 2;
    return c;
  }();
  auto clients = fed::make_clients(ds, small_env(), small_ddpg(), cfg.master_seed);
  const auto federated = fed::run_federated(clients, cfg, initial_global());
  const auto central = fed::run_centralized(ds, small_env(), small_ddpg(), cfg, initial_global());
  CHECK(federated.global == central.params);
  CHECK(federated.state.reward_trace() == central.reward_trace);
  CHECK(federated.metrics.clients.front().nmae == central.metrics.clients.front().nmae);
  CHECK(federated.state.sync_events == 6);
}

TEST_CASE("run_federated: W = K gives exactly one upload round") {
  auto ds = datasets(3);
  auto cfg = small_fed(3, 4, 4);
  cfg.client_ratio = 0.6;  // two of three
  auto clients = fed::make_clients(ds, small_env(), small_ddpg(), cfg.master_seed);
  const auto r = fed::run_federated(clients, cfg, initial_global());
  const auto model_bytes = fed::agent_payload_bytes(small_ddpg(), 7);
  CHECK(r.state.sync_events == 1);
  CHECK(r.state.uploaded_bytes == 2 * model_bytes);
  CHECK(r.state.downloaded_bytes == 3 * model_bytes);
  REQUIRE(r.state.journal.size() == 4);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK_FALSE(r.state.journal[k].synced);
    CHECK(r.state.journal[k].uploaded_bytes == 0);
    CHECK(r.state.journal[k].selected.size() == 2);
  }
  CHECK(r.state.journal[3].synced);

  // The counted traffic is what the load model predicts.
  const auto gain = fed::compute_load_gain(fed::load_model_for(clients), cfg);
  CHECK(gain.federated ==
        static_cast<double>(r.state.uploaded_bytes + r.state.downloaded_bytes));
}

TEST_CASE("run_federated: identical clients average to either one") {
  const auto ds = synthetic_dataset(0);
  const auto seeds = fed::participant_seeds(7, 0);
  const auto cfg1 = small_fed(1, 4, 2);
  const auto cfg2 = small_fed(2, 4, 2);

  std::vector<fed::Client> solo;
  solo.emplace_back(0, ds, small_env(), small_ddpg(), seeds);
  const auto alone = fed::run_federated(solo, cfg1, initial_global());

  std::vector<fed::Client> twins;
  twins.emplace_back(0, ds, small_env(), small_ddpg(), seeds);
  twins.emplace_back(1, ds, small_env(), small_ddpg(), seeds);
  const auto pair = fed::run_federated(twins, cfg2, initial_global());

  const auto a = flat_all(alone.global);
  const auto b = flat_all(pair.global);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst < 1e-12);
}

TEST_CASE("run_federated: clients that are not selected stay idle") {
  auto ds = datasets(4);
  auto cfg = small_fed(4, 3, 3);
  cfg.client_ratio = 0.25;
  auto clients = fed::make_clients(ds, small_env(), small_ddpg(), cfg.master_seed);
  const auto r = fed::run_federated(clients, cfg, initial_global());
  std::vector<std::size_t> trained(4, 0);
  for (const auto& rec : r.state.journal) {
    REQUIRE(rec.selected.size() == 1);
    ++trained[rec.selected.front()];
  }
  for (std::size_t n = 0; n < 4; ++n) CHECK(r.state.client_rewards[n].size() == trained[n]);
}

TEST_CASE("run_federated: serial and parallel execution agree") {
  auto ds = datasets(3);
  auto cfg = small_fed(3, 6, 3);
  auto serial_clients = fed::make_clients(ds, small_env(), small_ddpg(), cfg.master_seed);
  const auto serial = fed::run_federated(serial_clients, cfg, initial_global());
  cfg.workers = 3;
  auto parallel_clients = fed::make_clients(ds, small_env(), small_ddpg(), cfg.master_seed);
  const auto parallel = fed::run_federated(parallel_clients, cfg, initial_global());
  CHECK(serial.global == parallel.global);
  CHECK(serial.state.reward_trace() == parallel.state.reward_trace());
}

TEST_CASE("run_federated: repeated runs are bit-identical") {
  auto ds = datasets(2);
  const auto cfg = small_fed(2, 4, 2);
  auto c1 = fed::make_clients(ds, small_env(), small_ddpg(), cfg.master_seed);
  auto c2 = fed::make_clients(ds, small_env(), small_ddpg(), cfg.master_seed);
  const auto a = fed::run_federated(c1, cfg, initial_global());
  const auto b = fed::run_federated(c2, cfg, initial_global());
  CHECK(a.global == b.global);
  CHECK(a.metrics.clients.front().nmae == b.metrics.clients.front().nmae);
}

TEST_CASE("run_federated: a diverging client is reported") {
  auto ds = datasets(2);
  auto bad = small_ddpg();
  bad.critic_lr = 1e200;
  bad.actor_lr = 1e200;
  bad.optimizer = nn::OptimizerKind::sgd;
  const auto cfg = small_fed(2, 5, 5);
  std::vector<fed::Client> clients;
  clients.emplace_back(0, ds[0], small_env(), small_ddpg(), fed::participant_seeds(7, 0));
  clients.emplace_back(1, ds[1], small_env(), bad, fed::participant_seeds(7, 1));
  try {
    fed::run_federated(clients, cfg, initial_global());
    FAIL("divergence not detected");
  } catch (const ClientDivergedError& e) {
    CHECK(e.client_id() == 1);
    CHECK(e.epoch() == 1);
  }
}

TEST_CASE("run_federated: shape-incompatible clients are rejected") {
  auto ds = datasets(1);
  auto other = small_ddpg();
  other.actor_hidden = 5;
  auto clients = fed::make_clients(ds, small_env(), other, 7);
  CHECK_THROWS_AS(fed::run_federated(clients, small_fed(1, 2, 1), initial_global()), ProtocolError);
}

TEST_CASE("privacy: exchanged bytes never contain raw sample runs") {
  auto ds = datasets(3);
  auto cfg = small_fed(3, 6, 2);
  auto clients = fed::make_clients(ds, small_env(), small_ddpg(), cfg.master_seed);
  std::vector<std::vector<std::uint8_t>> traffic;
  std::size_t messages = 0;
  const auto r = fed::run_federated(
      clients, cfg, initial_global(),
      [&](fed::Direction, std::size_t, const fed::ParamPayload& p) {
        traffic.push_back(p.bytes);
        ++messages;
      });
  CHECK(messages == 3 + 3 * (3 + 3));

  // 8-sample runs of both the raw and the normalized training series.
  std::vector<std::vector<double>> sequences;
  for (const auto& d : ds) {
    sequences.push_back(d.series.values);
    sequences.push_back(fed::normalized_train(d, fed::env_for(d, small_env())));
  }
  const auto hits = oracle::leaked_windows(traffic, sequences);
  CHECK(hits == 0);
  CHECK(r.state.sync_events == 3);
}
