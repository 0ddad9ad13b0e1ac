#include <doctest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "erragree/embedding.hpp"
#include "erragree/error.hpp"

using namespace erragree;

namespace {

// In-process stand-in for the embedding sidecar.
class FakeSidecar {
 public:
  FakeSidecar() {
    server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      res.status = warm_ ? 200 : 503;
    });
    server_.Get("/models", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"models":[{"id":"clip-text","dims":4},{"id":"ref-distilroberta","dims":3}]})",
                      "application/json");
    });
    server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
      ++embed_calls_;
      const auto body = nlohmann::json::parse(req.body);
      const auto model = body.at("model").get<std::string>();
      if (model != "clip-text" && model != "ref-distilroberta") {
        res.status = 404;
        res.set_content(R"({"error":"unknown model"})", "application/json");
        return;
      }
      const std::size_t dims = model == "clip-text" ? (bad_dims_ ? 5 : 4) : 3;
      auto vectors = nlohmann::json::array();
      for (const auto& t : body.at("texts")) {
        const auto s = t.get<std::string>();
        std::vector<float> v(dims);
        for (std::size_t k = 0; k < dims; ++k) v[k] = static_cast<float>((s.size() + k * 7) % 11) + 1.0f;
        double n = 0;
        for (float x : v) n += double(x) * x;
        for (auto& x : v) x = static_cast<float>(x / std::sqrt(n));
        vectors.push_back(v);
      }
      res.set_content(nlohmann::json{{"model", model}, {"dims", dims}, {"vectors", vectors}}.dump(),
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeSidecar() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::atomic<bool> warm_{true};
  std::atomic<bool> bad_dims_{false};
  std::atomic<int> embed_calls_{0};

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("http backend follows the sidecar protocol") {
  FakeSidecar sidecar;
  auto backend = std::make_shared<HttpBackend>(sidecar.url());
  CHECK(backend->healthy());
  const auto models = backend->models();
  REQUIRE(models.size() == 2);
  CHECK(models[0].id == "clip-text");

  EmbeddingProvider provider(backend);
  const std::vector<std::string> texts{"a table with a few cups", "a table with many cups"};
  const auto m = provider.embed_texts("clip-text", texts);
  CHECK(m.rows() == 2);
  CHECK(m.dims() == 4);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double n = 0;
    for (float x : m.row(i)) n += double(x) * x;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("http backend error mapping") {
  FakeSidecar sidecar;
  HttpBackend backend(sidecar.url());
  const std::vector<std::string> texts{"x"};
  CHECK_THROWS_AS(backend.embed_batch("no-such-model", texts), BackendUnavailable);
  sidecar.bad_dims_ = true;
  CHECK_THROWS_AS(backend.embed_batch("clip-text", texts), DimensionMismatch);
  sidecar.warm_ = false;
  CHECK_FALSE(backend.healthy());

  HttpBackend nowhere("http://127.0.0.1:1", HttpBackend::Options{500});
  CHECK_THROWS_AS(nowhere.embed_batch("clip-text", texts), BackendUnavailable);
  CHECK_FALSE(nowhere.healthy());
}

TEST_CASE("client chunks large requests by batch size") {
  FakeSidecar sidecar;
  EmbeddingProvider provider(std::make_shared<HttpBackend>(sidecar.url()), nullptr, ProviderOptions{3, 2});
  std::vector<std::string> texts;
  for (int i = 0; i < 10; ++i) texts.push_back("text number " + std::to_string(i) + std::string(i, 'x'));
  const auto m = provider.embed_texts("ref-distilroberta", texts);
  CHECK(m.rows() == 10);
  CHECK(sidecar.embed_calls_ == 4);
}
