#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dve/core.hpp"

// Uniform invocation layer for the four model roles. Every model call in
// the pipelines goes through Invoker::invoke, which handles media arity
// checks, the content-addressed response cache, retries, and per-backend
// in-flight limits.

namespace dve::backends {

enum class Role { vlmm, llm, asr, judge };
enum class Transport { chat_http, subprocess, scripted };

std::string role_name(Role role);
Role parse_role(const std::string& name);
std::string transport_name(Transport transport);
Transport parse_transport(const std::string& name);

class TransportError : public Error {
 public:
  TransportError(const std::string& message, bool retryable)
      : Error(message), retryable_(retryable) {}
  bool retryable() const { return retryable_; }

 private:
  bool retryable_;
};

class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& message) : Error(message) {}
};

class ScriptMiss : public Error {
 public:
  explicit ScriptMiss(const std::string& message) : Error(message) {}
};

class AmbiguousScript : public Error {
 public:
  explicit AmbiguousScript(const std::string& message) : Error(message) {}
};

class MediaUnreadable : public Error {
 public:
  explicit MediaUnreadable(const std::string& message) : Error(message) {}
};

struct GenParams {
  double temperature = 0.0;
  int max_tokens = 1024;
  std::optional<int> seed;
};

struct GenParamsOverride {
  std::optional<double> temperature;
  std::optional<int> max_tokens;
  std::optional<int> seed;
};

GenParams effective_params(const GenParams& base, const std::optional<GenParamsOverride>& override);

enum class MediaKind { video, audio };

struct MediaRef {
  std::string path;
  MediaKind kind = MediaKind::video;
  double duration_seconds = 0.0;
};

MediaRef video_media(const VideoRef& video);
MediaRef audio_media(const VideoRef& video);

// One scripted stimulus/response pair. Substring matchers test against the
// request prompt; digest matchers against the full request digest.
struct ScriptEntry {
  enum class Match { prompt_substring, exact_digest };
  Match match = Match::prompt_substring;
  std::string pattern;
  std::string response;
};

class Script {
 public:
  // Throws AmbiguousScript when one substring matcher is contained in
  // another (the longer match would always also trigger the shorter), or
  // when two digest matchers share a digest.
  explicit Script(std::vector<ScriptEntry> entries);
  static Script load(const std::string& path);

  // Exactly-one-match lookup: zero matches -> ScriptMiss, more than one ->
  // AmbiguousScript.
  const std::string& lookup(const std::string& prompt, const std::string& digest) const;

 private:
  std::vector<ScriptEntry> entries_;
};

struct HttpConfig {
  std::string base_url = "http://127.0.0.1:8080/v1";
  std::string auth_env;  // env var holding the bearer token; empty = no auth
  // "video_url": attach each media file as one base64 data-URI part.
  // "frames": run frame_command to extract frame_count stills and attach
  // each as an image part.
  std::string media_mode = "video_url";
  int frame_count = 8;
  std::string frame_command;  // placeholders: {in} {out} {time}
  int timeout_seconds = 120;
};

struct SubprocessConfig {
  std::string command;  // placeholder: {media}
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
};

struct BackendSpec {
  std::string id;
  Role role = Role::llm;
  Transport transport = Transport::scripted;
  std::string model_name;
  GenParams params;
  HttpConfig http;
  SubprocessConfig subprocess;
  std::shared_ptr<const Script> script;
  RetryPolicy retry;
};

// Convenience constructor for tests and scripted runs.
BackendSpec scripted_backend(std::string id, Role role, std::vector<ScriptEntry> entries);

struct ModelRequest {
  std::string prompt;
  std::vector<MediaRef> media;
  std::optional<GenParamsOverride> params_override;
};

struct ModelResponse {
  std::string text;
  std::chrono::milliseconds latency{0};
  bool cached = false;
};

struct CacheKey {
  std::string digest;  // 64 hex chars (SHA-256)
};

std::string sha256_hex(const void* data, size_t size);
std::string sha256_hex(const std::string& data);
std::string digest_file(const std::string& path);  // MediaUnreadable on failure

// Digest over backend id, model name, effective params, prompt bytes, and
// media content digests. Media contribute by byte content, not by path.
CacheKey cache_key(const BackendSpec& spec, const ModelRequest& req);

// On-disk response store: one JSON file per key digest plus an append-only
// index.jsonl for audit. Writes go through a temp file + rename, so
// concurrent writers of the same key are last-writer-wins with identical
// values.
class ResponseCache {
 public:
  explicit ResponseCache(std::string dir);

  std::optional<std::string> get(const CacheKey& key) const;
  void put(const CacheKey& key, const BackendSpec& spec, const ModelRequest& req,
           const std::string& text);

  const std::string& dir() const { return dir_; }
  size_t entry_count() const;
  void purge();
  // Re-digests every entry's stored text; returns corrupt entry digests.
  std::vector<std::string> verify() const;

 private:
  std::string entry_path(const std::string& digest) const;
  std::string dir_;
  mutable std::mutex index_mutex_;
};

struct InvokerStats {
  size_t upstream_calls = 0;
  size_t cache_hits = 0;
  std::map<std::string, size_t> upstream_by_backend;
};

// Per-request record the pipelines keep for provenance.
struct BackendCall {
  Role role;
  std::string cache_key;
  bool cached = false;
};

using AuditTrail = std::vector<BackendCall>;

class Invoker {
 public:
  Invoker() = default;
  explicit Invoker(std::shared_ptr<ResponseCache> cache, int max_in_flight_per_backend = 4);

  // Cache lookup, transport dispatch with retries, cache fill. Appends one
  // BackendCall to `audit` when provided.
  ModelResponse invoke(const BackendSpec& spec, const ModelRequest& req,
                       AuditTrail* audit = nullptr);

  InvokerStats stats() const;
  void reset_stats();
  std::shared_ptr<ResponseCache> cache() const { return cache_; }

  // Test hook: observe every request that reaches invoke (including cache
  // hits), before any transport work.
  void set_request_observer(std::function<void(const BackendSpec&, const ModelRequest&)> fn);

  // Test hook: shrink backoff delays.
  void set_backoff_scale(double scale) { backoff_scale_ = scale; }

 private:
  class Gate;
  std::string dispatch(const BackendSpec& spec, const ModelRequest& req,
                       const std::string& digest);
  std::string dispatch_scripted(const BackendSpec& spec, const ModelRequest& req,
                                const std::string& digest);
  std::string dispatch_chat_http(const BackendSpec& spec, const ModelRequest& req);
  std::string dispatch_subprocess(const BackendSpec& spec, const ModelRequest& req);
  Gate& gate_for(const std::string& backend_id);

  std::shared_ptr<ResponseCache> cache_;
  int max_in_flight_ = 4;
  double backoff_scale_ = 1.0;
  std::function<void(const BackendSpec&, const ModelRequest&)> observer_;

  mutable std::mutex mutex_;
  InvokerStats stats_;
  std::map<std::string, std::unique_ptr<Gate>> gates_;
};

// Bounded in-flight gate, one per backend id.
class Invoker::Gate {
 public:
  explicit Gate(int limit) : limit_(limit) {}
  void acquire();
  void release();

 private:
  std::mutex m_;
  std::condition_variable cv_;
  int limit_;
  int in_flight_ = 0;
};

}  // namespace dve::backends
