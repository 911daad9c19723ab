#pragma once

// HTTP client for the model service (attention, fill-mask, UPOS tagging).
// Connection failures and 5xx answers are retried with doubling backoff;
// 4xx answers are the caller's fault and surface immediately.

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "ssud/attention_io.hpp"
#include "ssud/attention_source.hpp"
#include "ssud/error.hpp"
#include "ssud/substitution.hpp"

namespace ssud {

class ServiceRejectedError : public Error {
 public:
  ServiceRejectedError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

inline std::string base64_decode(std::string_view in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+' || c == '-') return 62;
    if (c == '/' || c == '_') return 63;
    return -1;
  };
  std::string out;
  out.reserve(in.size() / 4 * 3);
  std::uint32_t acc = 0;
  int bits = 0;
  std::size_t padding = 0;
  for (char c : in) {
    if (c == '=') {
      ++padding;
      continue;
    }
    if (c == '\n' || c == '\r') continue;
    if (padding > 0) throw ParseError("base64: data after padding");
    const int v = value(c);
    if (v < 0) throw ParseError("base64: invalid character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xff));
    }
  }
  if (bits >= 6 || padding > 2) throw ParseError("base64: truncated input");
  return out;
}

struct ServiceOptions {
  std::string endpoint = "http://127.0.0.1:8000";
  std::string model_id = "bert-base-uncased";
  int max_attempts = 4;
  std::chrono::milliseconds backoff{250};
  std::chrono::seconds timeout{120};
};

class ServiceClient : public AttentionSource, public FillMaskOracle, public UposTagger {
 public:
  explicit ServiceClient(ServiceOptions options) : options_(std::move(options)) {
    if (options_.max_attempts < 1) throw ConfigError("service client: max_attempts must be >= 1");
  }

  const ServiceOptions& options() const { return options_; }

  nlohmann::json health() { return request("GET", "/v1/health", nullptr); }

  AttentionFixture fetch(const std::string& sentence_id, const std::vector<std::string>& words) override {
    nlohmann::json body{{"model_id", options_.model_id}, {"words", words}};
    auto resp = request("POST", "/v1/attention", &body);
    try {
      const auto raw = base64_decode(resp.at("tensor").get<std::string>());
      if (raw.size() % 4 != 0) throw ParseError("attention tensor is not a whole number of f32 values");
      std::vector<float> values;
      detail::decode_f32_le(raw.data(), raw.size() / 4, values);
      resp["sentence_id"] = sentence_id;
      auto f = fixture_from_header(resp, std::move(values));
      if (f.word_count() != words.size()) throw ParseError("attention spans do not match the request words");
      return f;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("/v1/attention response: ") + e.what());
    }
  }

  std::vector<MaskPrediction> fill_mask(std::span<const std::string> words, std::size_t position,
                                        std::size_t top_k) override {
    nlohmann::json body{{"model_id", options_.model_id},
                        {"words", std::vector<std::string>(words.begin(), words.end())},
                        {"mask_position", position},
                        {"top_k", top_k}};
    auto resp = request("POST", "/v1/fill_mask", &body);
    std::vector<MaskPrediction> out;
    try {
      for (const auto& c : resp.at("candidates"))
        out.push_back({c.at("form").get<std::string>(), c.at("log_prob").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("/v1/fill_mask response: ") + e.what());
    }
    if (out.size() > top_k) throw ParseError("/v1/fill_mask returned more than top_k candidates");
    return out;
  }

  std::vector<std::string> tag(std::span<const std::string> words) override {
    nlohmann::json body{{"words", std::vector<std::string>(words.begin(), words.end())}};
    auto resp = request("POST", "/v1/upos", &body);
    std::vector<std::string> out;
    try {
      out = resp.at("upos").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("/v1/upos response: ") + e.what());
    }
    if (out.size() != words.size()) throw ParseError("/v1/upos returned a tag list of the wrong length");
    return out;
  }

  // Stored with every substitution record.
  nlohmann::json metadata() const { return {{"endpoint", options_.endpoint}, {"model_id", options_.model_id}}; }

 private:
  nlohmann::json request(const std::string& method, const std::string& path, const nlohmann::json* body) {
    std::string last_error;
    auto delay = options_.backoff;
    for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
      httplib::Client cli(options_.endpoint);
      cli.set_connection_timeout(options_.timeout);
      cli.set_read_timeout(options_.timeout);
      cli.set_write_timeout(options_.timeout);
      auto res = method == "GET" ? cli.Get(path) : cli.Post(path, body->dump(), "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
      } else if (res->status >= 200 && res->status < 300) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
          throw ParseError(path + ": response is not JSON: " + e.what());
        }
      } else if (res->status < 500) {
        throw ServiceRejectedError(res->status, path + ": HTTP " + std::to_string(res->status) + ": " + res->body);
      } else {
        last_error = "HTTP " + std::to_string(res->status) + ": " + res->body;
      }
      if (attempt < options_.max_attempts) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
    }
    throw TransportError(options_.endpoint + path + " failed after " + std::to_string(options_.max_attempts) +
                         " attempts: " + last_error);
  }

  ServiceOptions options_;
};

}  // namespace ssud
