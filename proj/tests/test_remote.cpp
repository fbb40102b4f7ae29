#include <doctest.h>

#include <atomic>
#include <functional>
#include <random>
#include <thread>

#include "net_support.hpp"
#include "ovhr3d/error.hpp"
#include "ovhr3d/png.hpp"
#include "ovhr3d/remote_backend.hpp"
#include "ovhr3d/wire.hpp"

// After the Eigen-based headers: <resolv.h> defines a macro named _res.
#include <httplib.h>

using namespace ovhr3d;
using nlohmann::json;

namespace {

// In-process stand-in for a model server.
class FakeModelServer {
 public:
  using Handler = std::function<void(const json& request, httplib::Response&)>;

  explicit FakeModelServer(Handler h) : handler_(std::move(h)) {
    server_.Post("/v1/detect_segment", [this](const httplib::Request& req, httplib::Response& res) {
      ++calls;
      handler_(json::parse(req.body), res);
    });
    server_.Post("/prefix/v1/detect_segment", [this](const httplib::Request& req, httplib::Response& res) {
      ++calls;
      handler_(json::parse(req.body), res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeModelServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::atomic<int> calls{0};

 private:
  Handler handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

RenderedView blank_view(int w = 16, int h = 12) {
  RenderedView v;
  v.intrinsics = CameraIntrinsics::from_fov(w, h, 60);
  v.rgb = Raster<Rgb>(w, h, Rgb{10, 20, 30});
  v.depth = Raster<float>(w, h, 1.0f);
  return v;
}

RemoteBackendConfig fast_config(const std::string& url) {
  RemoteBackendConfig c;
  c.url = url;
  c.retries = 2;
  c.backoff_ms = 1;
  c.timeout_s = 5;
  return c;
}

Mask block(int w, int h, int x0, int y0, int x1, int y1) {
  Mask m(w, h, 0);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.at(x, y) = 1;
  return m;
}

json instance(std::size_t phrase, std::vector<double> box, double score, const Mask& mask) {
  return {{"phrase_index", phrase}, {"box", box}, {"score", score}, {"mask_rle", wire::encode_rle(mask)}};
}

const PromptSpec kPrompts{{{"car", 4}, {"tree", 7}}};

}  // namespace

TEST_CASE("happy path maps phrases to class ids") {
  FakeModelServer server([](const json& req, httplib::Response& res) {
    CHECK(req["phrases"] == json::array({"car", "tree"}));
    CHECK(req["box_threshold"].get<double>() == doctest::Approx(0.35));
    const auto img = decode_png(wire::base64_decode(req["image"].get<std::string>()));
    CHECK(img.width == 16);
    CHECK(img.height == 12);
    CHECK(img.data[0] == Rgb{10, 20, 30});
    json body{{"instances",
               {instance(1, {2, 3, 6, 8}, 0.8, block(16, 12, 2, 3, 6, 8)), instance(0, {0, 0, 4, 4}, 0.6, Mask(16, 12))}}};
    res.set_content(body.dump(), "application/json");
  });
  RemoteBackend backend(fast_config(server.url()));
  const auto out = backend.detect_segment(blank_view(), kPrompts);
  REQUIRE(out.size() == 2);
  CHECK(out[0].detection == Detection{7, Box{2, 3, 6, 8}, 0.8});
  CHECK(out[0].mask == block(16, 12, 2, 3, 6, 8));
  CHECK(out[1].detection.class_id == 4);
  CHECK(out[1].pixel_count() == 0);
  CHECK(backend.detect(blank_view(), kPrompts).size() == 2);
}

TEST_CASE("url path prefix is preserved") {
  FakeModelServer server([](const json&, httplib::Response& res) { res.set_content(R"({"instances":[]})", "application/json"); });
  RemoteBackend backend(fast_config(server.url() + "/prefix/"));
  CHECK(backend.detect_segment(blank_view(), kPrompts).empty());
  CHECK(server.calls == 1);
}

TEST_CASE("transient server errors are retried") {
  std::atomic<int> n{0};
  FakeModelServer server([&](const json&, httplib::Response& res) {
    if (n++ < 2) {
      res.status = 503;
      res.set_content(R"({"error":"warming up"})", "application/json");
      return;
    }
    res.set_content(R"({"instances":[]})", "application/json");
  });
  RemoteBackend backend(fast_config(server.url()));
  CHECK(backend.detect_segment(blank_view(), kPrompts).empty());
  CHECK(server.calls == 3);
}

TEST_CASE("persistent failures surface as BackendUnavailable") {
  SUBCASE("5xx exhausts retries") {
    FakeModelServer server([](const json&, httplib::Response& res) { res.status = 500; });
    RemoteBackend backend(fast_config(server.url()));
    CHECK_THROWS_AS(backend.detect_segment(blank_view(), kPrompts), BackendUnavailable);
    CHECK(server.calls == 3);
  }
  SUBCASE("4xx is not retried") {
    FakeModelServer server([](const json&, httplib::Response& res) { res.status = 400; });
    RemoteBackend backend(fast_config(server.url()));
    CHECK_THROWS_AS(backend.detect_segment(blank_view(), kPrompts), BackendUnavailable);
    CHECK(server.calls == 1);
  }
  SUBCASE("nothing listening") {
    const int port = testing_support::unused_port();
    RemoteBackend backend(fast_config("http://127.0.0.1:" + std::to_string(port)));
    CHECK_THROWS_AS(backend.detect_segment(blank_view(), kPrompts), BackendUnavailable);
  }
  SUBCASE("malformed bodies") {
    const std::vector<std::string> bodies{
        "not json",
        R"({"wrong":1})",
        R"({"instances":[{"phrase_index":5,"box":[0,0,1,1],"score":1,"mask_rle":[192]}]})",
        R"({"instances":[{"phrase_index":0,"box":[0,0,1],"score":1,"mask_rle":[192]}]})",
        R"({"instances":[{"phrase_index":0,"box":[0,0,1,1],"score":"x","mask_rle":[192]}]})",
        R"({"instances":[{"phrase_index":0,"box":[0,0,1,1],"score":1,"mask_rle":[10]}]})",
    };
    for (const auto& b : bodies) {
      FakeModelServer server([&](const json&, httplib::Response& res) { res.set_content(b, "application/json"); });
      RemoteBackend backend(fast_config(server.url()));
      CHECK_THROWS_AS(backend.detect_segment(blank_view(), kPrompts), BackendUnavailable);
    }
  }
}

TEST_CASE("out-of-range boxes, scores and stray mask pixels are clamped") {
  FakeModelServer server([](const json&, httplib::Response& res) {
    json body{{"instances",
               {instance(0, {-4, -2, 30, 5}, 1.7, block(16, 12, 0, 0, 16, 12)),
                instance(1, {3, 3, 5, 5}, -0.2, block(16, 12, 0, 0, 16, 12))}}};
    res.set_content(body.dump(), "application/json");
  });
  RemoteBackend backend(fast_config(server.url()));
  const auto out = backend.detect_segment(blank_view(), kPrompts);
  REQUIRE(out.size() == 2);
  CHECK(out[0].detection.box == Box{0, 0, 16, 5});
  CHECK(out[0].detection.score == 1.0);
  CHECK(out[0].mask == block(16, 12, 0, 0, 16, 5));
  CHECK(out[1].detection.score == 0.0);
  CHECK(out[1].pixel_count() == 4u);
}

TEST_CASE("box-prompted segmentation returns one mask per box") {
  FakeModelServer server([](const json& req, httplib::Response& res) {
    REQUIRE(req.contains("boxes"));
    json inst = json::array();
    for (const auto& b : req["boxes"]) {
      const auto v = b.get<std::vector<double>>();
      inst.push_back(instance(0, v, 0.9, block(16, 12, int(v[0]), int(v[1]), int(v[2]), int(v[3]))));
    }
    res.set_content(json{{"instances", inst}}.dump(), "application/json");
  });
  RemoteBackend backend(fast_config(server.url()));
  const std::vector<Detection> dets{{4, Box{1, 1, 3, 3}, 0.5}, {7, Box{5, 2, 9, 6}, 0.4}};
  const auto out = backend.segment(blank_view(), dets);
  REQUIRE(out.size() == 2);
  CHECK(out[0].detection == dets[0]);
  CHECK(out[1].detection == dets[1]);
  CHECK(out[1].pixel_count() == 16u);
  CHECK(backend.segment(blank_view(), {}).empty());
}

TEST_CASE("base64 round trips and rejects junk") {
  std::mt19937_64 rng(3);
  for (int n = 0; n < 64; ++n) {
    std::string s(n, '\0');
    for (auto& c : s) c = static_cast<char>(rng());
    CHECK(wire::base64_decode(wire::base64_encode(s)) == s);
  }
  CHECK(wire::base64_encode("foobar") == "Zm9vYmFy");
  CHECK(wire::base64_encode("fo") == "Zm8=");
  CHECK_THROWS_AS(wire::base64_decode("Zm9v*mFy"), ParseError);
  CHECK_THROWS_AS(wire::base64_decode("Zm8"), ParseError);
}

TEST_CASE("mask run lengths round trip") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const int w = 1 + static_cast<int>(rng() % 20);
    const int h = 1 + static_cast<int>(rng() % 20);
    Mask m(w, h);
    for (auto& p : m.data) p = (rng() % 3 == 0) ? 1 : 0;
    const auto runs = wire::encode_rle(m);
    std::uint64_t total = 0;
    for (auto r : runs) total += r;
    CHECK(total == static_cast<std::uint64_t>(w) * h);
    CHECK(wire::decode_rle(runs, w, h) == m);
  }
  CHECK(wire::encode_rle(Mask(2, 1, 1)) == std::vector<std::uint32_t>{0, 2});
  CHECK_THROWS_AS(wire::decode_rle({1, 1}, 2, 2), ParseError);
}
