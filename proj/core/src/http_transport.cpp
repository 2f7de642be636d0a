#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <regex>

#include "mhqa/llm.hpp"

namespace mhqa::llm {

namespace {

class HttpTransport final : public Transport {
 public:
  explicit HttpTransport(std::chrono::seconds timeout) : timeout_(timeout) {}

  TransportResponse post(const std::string& url, const std::map<std::string, std::string>& headers,
                         const std::string& body) override {
    static const std::regex pattern(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, pattern)) throw ConfigError("malformed endpoint URL '" + url + "'");
    const std::string path = m[2].matched ? m[2].str() : "/";

    httplib::Client client(m[1].str());
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers request_headers(headers.begin(), headers.end());
    auto result = client.Post(path.c_str(), request_headers, body, "application/json");
    if (!result) throw TransportFailure("HTTP transport error: " + httplib::to_string(result.error()));

    TransportResponse response{result->status, result->body, std::nullopt};
    if (result->has_header("Retry-After")) {
      try {
        response.retry_after = std::stod(result->get_header_value("Retry-After"));
      } catch (const std::exception&) {
        // HTTP-date form; fall back to exponential backoff
      }
    }
    return response;
  }

 private:
  std::chrono::seconds timeout_;
};

}  // namespace

std::unique_ptr<Transport> make_http_transport(std::chrono::seconds timeout) {
  return std::make_unique<HttpTransport>(timeout);
}

}  // namespace mhqa::llm
