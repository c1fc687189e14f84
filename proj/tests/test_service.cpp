#include <future>
#include <thread>

#include <gtest/gtest.h>

#include "dancemeld/service/http.hpp"

using namespace dancemeld;
using namespace dancemeld::service;

namespace {

LoadedModels tiny_models() {
  hvqvae::HVQVAEConfig vc;
  vc.hidden = 16;
  vc.code_dim = 8;
  vc.bottom_codes = 32;
  vc.top_codes = 16;
  vc.music_dim = 6;
  vc.music_hidden = 8;
  diffusion::DenoiserConfig dc;
  dc.layers = 1;
  dc.heads = 2;
  dc.latent_dim = 16;
  dc.feed_forward = 32;
  dc.seq_len = 16;
  dc.input_dim = 24;
  dc.cond_dim = 6;
  diffusion::LatentStats stats{Tensor<float>(1, 24), Tensor<float>(1, 24, 1.0f)};
  LoadedModels m;
  m.vq = std::make_shared<hvqvae::HVQVAE<float>>(vc);
  m.prior = std::make_shared<diffusion::DiffusionPrior>(dc, 100, stats);
  m.vq_info = {{"kind", "hvqvae"}};
  m.prior_info = {{"kind", "prior"}};
  m.top_usage.assign(16, 1);
  m.bottom_usage.assign(32, 0);
  return m;
}

io::fs::path fresh_dir(const std::string& name) {
  const auto dir = io::fs::temp_directory_path() / "dancemeld_test_service" / name;
  io::fs::remove_all(dir);
  return dir;
}

// A server on an ephemeral port for the lifetime of the fixture.
class Running {
 public:
  Running(std::optional<LoadedModels> models, const io::fs::path& dir)
      : service_(std::move(models), dir, motion::builtin_skeleton()) {
    mount(server_, service_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~Running() {
    server_.stop();
    thread_.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    return c;
  }

  Service& service() { return service_; }

 private:
  Service service_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

json post(httplib::Client& c, const std::string& path, const json& body, int expect) {
  auto res = c.Post(path.c_str(), body.dump(), "application/json");
  EXPECT_TRUE(res) << path;
  if (!res) return {};
  EXPECT_EQ(res->status, expect) << res->body;
  return json::parse(res->body);
}

std::pair<int, std::string> get(httplib::Client& c, const std::string& path) {
  auto res = c.Get(path.c_str());
  EXPECT_TRUE(res) << path;
  return res ? std::pair{res->status, res->body} : std::pair{0, std::string()};
}

}  // namespace

TEST(Service, HealthAndCodebooks) {
  Running s(tiny_models(), fresh_dir("health"));
  auto c = s.client();
  auto [status, body] = get(c, "/api/health");
  EXPECT_EQ(status, 200);
  const auto h = json::parse(body);
  EXPECT_EQ(h.at("v"), 1);
  EXPECT_EQ(h.at("status"), "ok");
  EXPECT_EQ(h.at("model_versions").at("vq").at("kind"), "hvqvae");
  auto [cs, cb] = get(c, "/api/codebooks");
  EXPECT_EQ(cs, 200);
  const auto books = json::parse(cb);
  EXPECT_EQ(books.at("top").at("size"), 16);
  EXPECT_EQ(books.at("top").at("used"), 16);
  EXPECT_EQ(books.at("bottom").at("used"), 0);
}

TEST(Service, GenerateThenGetIsIdentical) {
  Running s(tiny_models(), fresh_dir("generate"));
  auto c = s.client();
  const auto g = post(c, "/api/generate", {{"music", "click:120"}, {"steps", 5}, {"seed", 3}}, 200);
  EXPECT_EQ(g.at("v"), 1);
  EXPECT_EQ(g.at("codes").at("top").size(), 8u);
  EXPECT_EQ(g.at("codes").at("bottom").size(), 16u);
  EXPECT_EQ(g.at("joint_positions").size(), 64u);
  EXPECT_EQ(g.at("joint_positions").at(0).size(), 72u);
  EXPECT_TRUE(g.at("parent_id").is_null());
  EXPECT_FALSE(g.at("beats").empty());
  const auto id = g.at("id").get<std::string>();
  auto [status, body] = get(c, "/api/session/" + id);
  EXPECT_EQ(status, 200);
  EXPECT_EQ(json::parse(body), g);
  // Same seed, same content (fresh id).
  const auto again = post(c, "/api/generate", {{"music", "click:120"}, {"steps", 5}, {"seed", 3}}, 200);
  EXPECT_EQ(again.at("codes"), g.at("codes"));
  EXPECT_NE(again.at("id"), g.at("id"));
}

TEST(Service, SessionsPersistAcrossRestarts) {
  const auto dir = fresh_dir("persist");
  json g;
  {
    Running s(tiny_models(), dir);
    auto c = s.client();
    g = post(c, "/api/generate", {{"music", "click:90"}, {"steps", 3}}, 200);
  }
  Running s(tiny_models(), dir);
  auto c = s.client();
  auto [status, body] = get(c, "/api/session/" + g.at("id").get<std::string>());
  EXPECT_EQ(status, 200);
  EXPECT_EQ(json::parse(body), g);
}

TEST(Service, EditsCreateImmutableChildren) {
  Running s(tiny_models(), fresh_dir("edit"));
  auto c = s.client();
  const auto parent = post(c, "/api/generate", {{"music", "click:120"}, {"steps", 3}}, 200);
  const auto pid = parent.at("id").get<std::string>();
  const json replace = {{"ops", {{{"kind", "replace"}, {"target", {{"level", "top"}, {"range", {2, 3}}}}, {"payload", {5}}}}}};
  const json remove = {{"ops", {{{"kind", "delete"}, {"target", {{"level", "top"}, {"range", {0, 1}}}}}}}};
  const auto a = post(c, "/api/session/" + pid + "/edit", replace, 200);
  const auto b = post(c, "/api/session/" + pid + "/edit", remove, 200);
  EXPECT_NE(a.at("id"), b.at("id"));
  EXPECT_EQ(a.at("parent_id"), pid);
  EXPECT_EQ(b.at("parent_id"), pid);
  EXPECT_EQ(a.at("codes").at("top").at(2), 5);
  EXPECT_EQ(b.at("codes").at("top").size(), 7u);
  EXPECT_EQ(b.at("joint_positions").size(), 56u);
  // The parent is untouched.
  auto [status, body] = get(c, "/api/session/" + pid);
  EXPECT_EQ(json::parse(body), parent);
  // Empty edit: same codes, new child.
  const auto same = post(c, "/api/session/" + pid + "/edit", {{"ops", json::array()}}, 200);
  EXPECT_EQ(same.at("codes"), parent.at("codes"));
  // Swap the top level from another session by id.
  const auto donor = post(c, "/api/generate", {{"music", "click:150"}, {"steps", 3}, {"seed", 9}}, 200);
  const json swap = {{"ops", {{{"kind", "swap_top"}, {"payload", {{"session", donor.at("id")}}}}}}};
  const auto swapped = post(c, "/api/session/" + pid + "/edit", swap, 200);
  EXPECT_EQ(swapped.at("codes").at("top"), donor.at("codes").at("top"));
  EXPECT_EQ(swapped.at("codes").at("bottom"), parent.at("codes").at("bottom"));
}

TEST(Service, ErrorMapping) {
  Running s(tiny_models(), fresh_dir("errors"));
  auto c = s.client();
  const auto parent = post(c, "/api/generate", {{"music", "click:120"}, {"steps", 3}}, 200);
  const auto pid = parent.at("id").get<std::string>();
  const json oob = {{"ops", {{{"kind", "replace"}, {"target", {{"level", "top"}, {"range", {7, 9}}}}, {"payload", {1, 1}}}}}};
  const auto e = post(c, "/api/session/" + pid + "/edit", oob, 400);
  EXPECT_EQ(e.at("error"), "IndexOutOfRange");
  const json odd = {{"ops", {{{"kind", "delete"}, {"target", {{"level", "bottom"}, {"range", {1, 2}}}}}}}};
  EXPECT_EQ(post(c, "/api/session/" + pid + "/edit", odd, 400).at("error"), "RatioViolation");
  EXPECT_EQ(post(c, "/api/session/nosuch/edit", {{"ops", json::array()}}, 404).at("error"), "NotFound");
  auto [status, body] = get(c, "/api/session/0123456789abcdef");
  EXPECT_EQ(status, 404);
  EXPECT_EQ(post(c, "/api/generate", {{"music", "click:900"}}, 400).at("error"), "InvalidTempo");
  EXPECT_EQ(post(c, "/api/generate", {{"steps", 3}}, 400).at("error"), "InvalidArgument");
  EXPECT_EQ(post(c, "/api/generate", {{"music", "click:120"}, {"steps", 0}}, 400).at("error"), "InvalidStepCount");
  EXPECT_EQ(post(c, "/api/generate", {{"music", "no_such_track"}}, 404).at("error"), "NotFound");
  EXPECT_EQ(post(c, "/api/generate", {{"music", "click:120"}, {"v", 2}}, 400).at("error"), "InvalidArgument");
  auto raw = c.Post("/api/generate", "{not json", "application/json");
  ASSERT_TRUE(raw);
  EXPECT_EQ(raw->status, 400);
  EXPECT_EQ(http_status(ErrorKind::IoError), 500);
}

TEST(Service, ModelsNotLoaded) {
  Running s(std::nullopt, fresh_dir("nomodels"));
  auto c = s.client();
  auto [status, body] = get(c, "/api/health");
  EXPECT_EQ(status, 200);
  EXPECT_EQ(json::parse(body).at("status"), "models_not_loaded");
  EXPECT_EQ(post(c, "/api/generate", {{"music", "click:120"}}, 409).at("error"), "ModelsNotLoaded");
  auto [cs, cb] = get(c, "/api/codebooks");
  EXPECT_EQ(cs, 409);
}

TEST(Service, ConcurrentRequests) {
  Running s(tiny_models(), fresh_dir("concurrent"));
  std::vector<std::future<json>> jobs;
  for (int i = 0; i < 4; ++i)
    jobs.push_back(std::async(std::launch::async, [&, i] {
      auto c = s.client();
      return post(c, "/api/generate", {{"music", "click:120"}, {"steps", 3}, {"seed", i % 2}}, 200);
    }));
  std::vector<json> out;
  for (auto& j : jobs) out.push_back(j.get());
  EXPECT_EQ(out[0].at("codes"), out[2].at("codes"));
  EXPECT_EQ(out[1].at("codes"), out[3].at("codes"));
  EXPECT_NE(out[0].at("id"), out[2].at("id"));
}
