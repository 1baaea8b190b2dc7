#include "dve/backends.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include <json.hpp>

#include <httplib.h>

namespace dve::backends {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kIndexFile = "index.jsonl";
constexpr const char* kRunStatsFile = "last_run_stats.json";

std::string base64_encode(const std::string& bytes) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 2 < bytes.size()) {
    unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                 (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                 static_cast<unsigned char>(bytes[i + 2]);
    out += alphabet[(v >> 18) & 63];
    out += alphabet[(v >> 12) & 63];
    out += alphabet[(v >> 6) & 63];
    out += alphabet[v & 63];
    i += 3;
  }
  if (i + 1 == bytes.size()) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out += alphabet[(v >> 18) & 63];
    out += alphabet[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                 (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out += alphabet[(v >> 18) & 63];
    out += alphabet[(v >> 12) & 63];
    out += alphabet[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MediaUnreadable("cannot read media file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw MediaUnreadable("read failure on media file: " + path);
  return buffer.str();
}

std::string shell_quote(const std::string& arg) {
  std::string quoted = "'";
  for (char c : arg) {
    if (c == '\'') {
      quoted += "'\\''";
    } else {
      quoted += c;
    }
  }
  quoted += "'";
  return quoted;
}

std::string substitute(std::string text, const std::string& placeholder,
                       const std::string& value) {
  std::string::size_type pos = 0;
  while ((pos = text.find(placeholder, pos)) != std::string::npos) {
    text.replace(pos, placeholder.size(), value);
    pos += value.size();
  }
  return text;
}

// Runs a shell command and captures its stdout. Nonzero exit maps to a
// retryable TransportError.
std::string run_command_capture(const std::string& command) {
  FILE* pipe = ::popen(command.c_str(), "r");
  if (!pipe) throw TransportError("popen failed for: " + command, true);
  std::string output;
  std::array<char, 4096> chunk{};
  size_t n = 0;
  while ((n = ::fread(chunk.data(), 1, chunk.size(), pipe)) > 0) {
    output.append(chunk.data(), n);
  }
  int status = ::pclose(pipe);
  if (status != 0) {
    throw TransportError("command exited with status " + std::to_string(status) + ": " + command,
                         true);
  }
  return output;
}

std::string mime_for(const MediaRef& media) {
  fs::path p(media.path);
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (media.kind == MediaKind::audio) {
    if (ext == ".wav") return "audio/wav";
    if (ext == ".flac") return "audio/flac";
    return "audio/mpeg";
  }
  if (ext == ".webm") return "video/webm";
  if (ext == ".mkv") return "video/x-matroska";
  return "video/mp4";
}

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // prefix path, no trailing slash
};

ParsedUrl parse_base_url(const std::string& base_url) {
  auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("base_url must include a scheme: " + base_url);
  }
  auto path_start = base_url.find('/', scheme_end + 3);
  ParsedUrl parsed;
  if (path_start == std::string::npos) {
    parsed.origin = base_url;
  } else {
    parsed.origin = base_url.substr(0, path_start);
    parsed.path = base_url.substr(path_start);
  }
  while (!parsed.path.empty() && parsed.path.back() == '/') parsed.path.pop_back();
  return parsed;
}

void check_media_arity(const BackendSpec& spec, const ModelRequest& req) {
  switch (spec.role) {
    case Role::vlmm:
      if (req.media.empty()) {
        throw ContractViolation("VLMM request for backend '" + spec.id +
                                "' carries no media");
      }
      return;
    case Role::llm:
    case Role::judge:
      if (!req.media.empty()) {
        throw ContractViolation(role_name(spec.role) + " request for backend '" + spec.id +
                                "' must not carry media");
      }
      return;
    case Role::asr:
      if (req.media.size() != 1 || req.media[0].kind != MediaKind::audio) {
        throw ContractViolation("ASR request for backend '" + spec.id +
                                "' must carry exactly one audio media item");
      }
      return;
  }
}

}  // namespace

std::string role_name(Role role) {
  switch (role) {
    case Role::vlmm: return "vlmm";
    case Role::llm: return "llm";
    case Role::asr: return "asr";
    case Role::judge: return "judge";
  }
  throw Error("unknown role");
}

Role parse_role(const std::string& name) {
  if (name == "vlmm") return Role::vlmm;
  if (name == "llm") return Role::llm;
  if (name == "asr") return Role::asr;
  if (name == "judge") return Role::judge;
  throw ConfigError("unknown backend role: " + name);
}

std::string transport_name(Transport transport) {
  switch (transport) {
    case Transport::chat_http: return "chat_http";
    case Transport::subprocess: return "subprocess";
    case Transport::scripted: return "scripted";
  }
  throw Error("unknown transport");
}

Transport parse_transport(const std::string& name) {
  if (name == "chat_http") return Transport::chat_http;
  if (name == "subprocess") return Transport::subprocess;
  if (name == "scripted") return Transport::scripted;
  throw ConfigError("unknown transport: " + name);
}

GenParams effective_params(const GenParams& base,
                           const std::optional<GenParamsOverride>& override) {
  GenParams params = base;
  if (override) {
    if (override->temperature) params.temperature = *override->temperature;
    if (override->max_tokens) params.max_tokens = *override->max_tokens;
    if (override->seed) params.seed = *override->seed;
  }
  return params;
}

MediaRef video_media(const VideoRef& video) {
  return MediaRef{video.path_or_uri, MediaKind::video, video.duration_seconds};
}

MediaRef audio_media(const VideoRef& video) {
  return MediaRef{video.path_or_uri, MediaKind::audio, video.duration_seconds};
}

Script::Script(std::vector<ScriptEntry> entries) : entries_(std::move(entries)) {
  for (size_t i = 0; i < entries_.size(); ++i) {
    for (size_t j = i + 1; j < entries_.size(); ++j) {
      const auto& a = entries_[i];
      const auto& b = entries_[j];
      if (a.match != b.match) continue;
      if (a.match == ScriptEntry::Match::exact_digest) {
        if (a.pattern == b.pattern) {
          throw AmbiguousScript("duplicate digest matcher: " + a.pattern);
        }
      } else {
        if (a.pattern.find(b.pattern) != std::string::npos ||
            b.pattern.find(a.pattern) != std::string::npos) {
          throw AmbiguousScript("overlapping substring matchers: '" + a.pattern + "' and '" +
                                b.pattern + "'");
        }
      }
    }
  }
}

Script Script::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open script file: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& ex) {
    throw ConfigError("malformed script file " + path + ": " + ex.what());
  }
  std::vector<ScriptEntry> entries;
  for (const auto& item : doc.at("entries")) {
    ScriptEntry entry;
    const std::string kind = item.value("match", "substring");
    if (kind == "substring") {
      entry.match = ScriptEntry::Match::prompt_substring;
    } else if (kind == "digest") {
      entry.match = ScriptEntry::Match::exact_digest;
    } else {
      throw ConfigError("unknown script matcher kind: " + kind);
    }
    entry.pattern = item.at("pattern").get<std::string>();
    entry.response = item.at("response").get<std::string>();
    entries.push_back(std::move(entry));
  }
  return Script(std::move(entries));
}

const std::string& Script::lookup(const std::string& prompt, const std::string& digest) const {
  const ScriptEntry* matched = nullptr;
  for (const auto& entry : entries_) {
    bool hit = entry.match == ScriptEntry::Match::exact_digest
                   ? entry.pattern == digest
                   : prompt.find(entry.pattern) != std::string::npos;
    if (!hit) continue;
    if (matched) {
      throw AmbiguousScript("request matched multiple script entries ('" + matched->pattern +
                            "' and '" + entry.pattern + "')");
    }
    matched = &entry;
  }
  if (!matched) {
    throw ScriptMiss("no script entry for request digest " + digest + ", prompt: " +
                     prompt.substr(0, 120));
  }
  return matched->response;
}

BackendSpec scripted_backend(std::string id, Role role, std::vector<ScriptEntry> entries) {
  BackendSpec spec;
  spec.id = std::move(id);
  spec.role = role;
  spec.transport = Transport::scripted;
  spec.model_name = "scripted";
  spec.script = std::make_shared<Script>(std::move(entries));
  return spec;
}

std::string sha256_hex(const void* data, size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int digest_len = 0;
  if (EVP_Digest(data, size, digest, &digest_len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(digest_len * 2);
  for (unsigned int i = 0; i < digest_len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::string sha256_hex(const std::string& data) { return sha256_hex(data.data(), data.size()); }

std::string digest_file(const std::string& path) { return sha256_hex(read_file_bytes(path)); }

CacheKey cache_key(const BackendSpec& spec, const ModelRequest& req) {
  const GenParams params = effective_params(spec.params, req.params_override);
  json material;
  material["backend_id"] = spec.id;
  material["model"] = spec.model_name;
  material["temperature"] = params.temperature;
  material["max_tokens"] = params.max_tokens;
  material["seed"] = params.seed ? json(*params.seed) : json(nullptr);
  material["prompt"] = req.prompt;
  json media = json::array();
  for (const auto& item : req.media) {
    media.push_back({{"kind", item.kind == MediaKind::audio ? "audio" : "video"},
                     {"content", digest_file(item.path)}});
  }
  material["media"] = media;
  return CacheKey{sha256_hex(material.dump())};
}

ResponseCache::ResponseCache(std::string dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

std::string ResponseCache::entry_path(const std::string& digest) const {
  return (fs::path(dir_) / (digest + ".json")).string();
}

std::optional<std::string> ResponseCache::get(const CacheKey& key) const {
  std::ifstream in(entry_path(key.digest));
  if (!in) return std::nullopt;
  try {
    json entry;
    in >> entry;
    return entry.at("text").get<std::string>();
  } catch (const json::exception&) {
    return std::nullopt;  // corrupt entry; treat as miss, verify() reports it
  }
}

void ResponseCache::put(const CacheKey& key, const BackendSpec& spec, const ModelRequest& req,
                        const std::string& text) {
  json entry;
  entry["digest"] = key.digest;
  entry["backend_id"] = spec.id;
  entry["role"] = role_name(spec.role);
  entry["model"] = spec.model_name;
  entry["text"] = text;
  entry["text_sha256"] = sha256_hex(text);
  json media = json::array();
  for (const auto& item : req.media) media.push_back(item.path);
  entry["request"] = {{"prompt_head", req.prompt.substr(0, 160)}, {"media", media}};

  std::ostringstream tmp_name;
  tmp_name << key.digest << ".tmp." << std::this_thread::get_id();
  const fs::path tmp = fs::path(dir_) / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << entry.dump() << "\n";
  }
  fs::rename(tmp, entry_path(key.digest));

  std::lock_guard<std::mutex> lock(index_mutex_);
  std::ofstream index(fs::path(dir_) / kIndexFile, std::ios::app);
  index << json{{"digest", key.digest},
                {"backend_id", spec.id},
                {"role", role_name(spec.role)},
                {"prompt_head", req.prompt.substr(0, 160)}}
               .dump()
        << "\n";
}

size_t ResponseCache::entry_count() const {
  size_t count = 0;
  if (!fs::exists(dir_)) return 0;
  for (const auto& item : fs::directory_iterator(dir_)) {
    if (item.path().extension() == ".json" && item.path().filename() != kRunStatsFile) ++count;
  }
  return count;
}

void ResponseCache::purge() {
  if (!fs::exists(dir_)) return;
  for (const auto& item : fs::directory_iterator(dir_)) {
    fs::remove(item.path());
  }
}

std::vector<std::string> ResponseCache::verify() const {
  std::vector<std::string> corrupt;
  if (!fs::exists(dir_)) return corrupt;
  for (const auto& item : fs::directory_iterator(dir_)) {
    if (item.path().extension() != ".json" || item.path().filename() == kRunStatsFile) continue;
    const std::string stem = item.path().stem().string();
    std::ifstream in(item.path());
    try {
      json entry;
      in >> entry;
      const auto text = entry.at("text").get<std::string>();
      const auto stored = entry.at("text_sha256").get<std::string>();
      const auto digest = entry.at("digest").get<std::string>();
      if (sha256_hex(text) != stored || digest != stem) corrupt.push_back(stem);
    } catch (const json::exception&) {
      corrupt.push_back(stem);
    }
  }
  std::sort(corrupt.begin(), corrupt.end());
  return corrupt;
}

void Invoker::Gate::acquire() {
  std::unique_lock<std::mutex> lock(m_);
  cv_.wait(lock, [&] { return in_flight_ < limit_; });
  ++in_flight_;
}

void Invoker::Gate::release() {
  {
    std::lock_guard<std::mutex> lock(m_);
    --in_flight_;
  }
  cv_.notify_one();
}

Invoker::Invoker(std::shared_ptr<ResponseCache> cache, int max_in_flight_per_backend)
    : cache_(std::move(cache)), max_in_flight_(std::max(1, max_in_flight_per_backend)) {}

void Invoker::set_request_observer(
    std::function<void(const BackendSpec&, const ModelRequest&)> fn) {
  observer_ = std::move(fn);
}

InvokerStats Invoker::stats() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return stats_;
}

void Invoker::reset_stats() {
  std::lock_guard<std::mutex> lock(mutex_);
  stats_ = InvokerStats{};
}

Invoker::Gate& Invoker::gate_for(const std::string& backend_id) {
  std::lock_guard<std::mutex> lock(mutex_);
  auto& slot = gates_[backend_id];
  if (!slot) slot = std::make_unique<Gate>(max_in_flight_);
  return *slot;
}

ModelResponse Invoker::invoke(const BackendSpec& spec, const ModelRequest& req,
                              AuditTrail* audit) {
  if (observer_) observer_(spec, req);
  check_media_arity(spec, req);
  const CacheKey key = cache_key(spec, req);

  if (cache_) {
    if (auto hit = cache_->get(key)) {
      {
        std::lock_guard<std::mutex> lock(mutex_);
        ++stats_.cache_hits;
      }
      if (audit) audit->push_back({spec.role, key.digest, true});
      return ModelResponse{*hit, std::chrono::milliseconds(0), true};
    }
  }

  Gate& gate = gate_for(spec.id);
  gate.acquire();
  struct GateRelease {
    Gate& g;
    ~GateRelease() { g.release(); }
  } release_on_exit{gate};

  const auto started = std::chrono::steady_clock::now();
  std::string text;
  int attempt = 0;
  while (true) {
    ++attempt;
    try {
      text = dispatch(spec, req, key.digest);
      break;
    } catch (const TransportError& ex) {
      if (!ex.retryable() || attempt >= std::max(1, spec.retry.attempts)) throw;
      auto delay = std::chrono::duration_cast<std::chrono::milliseconds>(
          spec.retry.initial_backoff * (1 << (attempt - 1)) * backoff_scale_);
      std::this_thread::sleep_for(delay);
    }
  }
  const auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - started);

  {
    std::lock_guard<std::mutex> lock(mutex_);
    ++stats_.upstream_calls;
    ++stats_.upstream_by_backend[spec.id];
  }
  if (cache_) cache_->put(key, spec, req, text);
  if (audit) audit->push_back({spec.role, key.digest, false});
  return ModelResponse{text, latency, false};
}

std::string Invoker::dispatch(const BackendSpec& spec, const ModelRequest& req,
                              const std::string& digest) {
  switch (spec.transport) {
    case Transport::scripted:
      return dispatch_scripted(spec, req, digest);
    case Transport::chat_http:
      return dispatch_chat_http(spec, req);
    case Transport::subprocess:
      return dispatch_subprocess(spec, req);
  }
  throw Error("unknown transport");
}

std::string Invoker::dispatch_scripted(const BackendSpec& spec, const ModelRequest& req,
                                       const std::string& digest) {
  if (!spec.script) {
    throw ConfigError("scripted backend '" + spec.id + "' has no script attached");
  }
  return spec.script->lookup(req.prompt, digest);
}

std::string Invoker::dispatch_chat_http(const BackendSpec& spec, const ModelRequest& req) {
  const ParsedUrl url = parse_base_url(spec.http.base_url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(spec.http.timeout_seconds, 0);
  client.set_read_timeout(spec.http.timeout_seconds, 0);

  const GenParams params = effective_params(spec.params, req.params_override);
  json body;
  body["model"] = spec.model_name;
  body["temperature"] = params.temperature;
  body["max_tokens"] = params.max_tokens;
  if (params.seed) body["seed"] = *params.seed;

  json content;
  if (req.media.empty()) {
    content = req.prompt;
  } else {
    content = json::array();
    content.push_back({{"type", "text"}, {"text", req.prompt}});
    for (const auto& media : req.media) {
      if (spec.http.media_mode == "frames" && media.kind == MediaKind::video) {
        if (spec.http.frame_command.empty()) {
          throw ConfigError("media_mode 'frames' requires frame_command for backend '" +
                            spec.id + "'");
        }
        const fs::path tmp_dir =
            fs::temp_directory_path() /
            ("dve-frames-" + sha256_hex(media.path).substr(0, 12));
        fs::create_directories(tmp_dir);
        const int count = std::max(1, spec.http.frame_count);
        for (int i = 0; i < count; ++i) {
          const double t = media.duration_seconds * (i + 0.5) / count;
          const fs::path frame = tmp_dir / ("frame_" + std::to_string(i) + ".jpg");
          std::string cmd = spec.http.frame_command;
          cmd = substitute(cmd, "{in}", shell_quote(media.path));
          cmd = substitute(cmd, "{out}", shell_quote(frame.string()));
          cmd = substitute(cmd, "{time}", std::to_string(t));
          run_command_capture(cmd);
          content.push_back(
              {{"type", "image_url"},
               {"image_url",
                {{"url", "data:image/jpeg;base64," +
                             base64_encode(read_file_bytes(frame.string()))}}}});
        }
        fs::remove_all(tmp_dir);
      } else {
        const std::string uri =
            "data:" + mime_for(media) + ";base64," + base64_encode(read_file_bytes(media.path));
        if (media.kind == MediaKind::audio) {
          content.push_back({{"type", "audio_url"}, {"audio_url", {{"url", uri}}}});
        } else {
          content.push_back({{"type", "video_url"}, {"video_url", {{"url", uri}}}});
        }
      }
    }
  }
  body["messages"] = json::array({{{"role", "user"}, {"content", content}}});

  httplib::Headers headers;
  if (!spec.http.auth_env.empty()) {
    if (const char* token = std::getenv(spec.http.auth_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  auto result =
      client.Post(url.path + "/chat/completions", headers, body.dump(), "application/json");
  if (!result) {
    throw TransportError("connection to " + url.origin + " failed: " +
                             httplib::to_string(result.error()),
                         true);
  }
  if (result->status != 200) {
    const bool retryable =
        result->status == 408 || result->status == 429 || result->status >= 500;
    throw TransportError("HTTP " + std::to_string(result->status) + " from " + url.origin +
                             ": " + result->body.substr(0, 200),
                         retryable);
  }
  try {
    json payload = json::parse(result->body);
    return payload.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& ex) {
    throw TransportError(std::string("malformed chat completion response: ") + ex.what(), false);
  }
}

std::string Invoker::dispatch_subprocess(const BackendSpec& spec, const ModelRequest& req) {
  if (spec.subprocess.command.empty()) {
    throw ConfigError("subprocess backend '" + spec.id + "' has no command configured");
  }
  if (req.media.empty()) {
    throw ContractViolation("subprocess transport requires a media item");
  }
  std::string cmd = spec.subprocess.command;
  if (cmd.find("{media}") != std::string::npos) {
    cmd = substitute(cmd, "{media}", shell_quote(req.media[0].path));
  } else {
    cmd += " " + shell_quote(req.media[0].path);
  }
  return run_command_capture(cmd);
}

}  // namespace dve::backends
