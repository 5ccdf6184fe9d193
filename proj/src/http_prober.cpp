#include <httplib.h>

#include "supervisor/decomposition.hpp"
#include "supervisor/util.hpp"

namespace supervisor {

std::optional<HeadResponse> HttpProber::head(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) return std::nullopt;
  auto scheme = to_lower(url.substr(0, scheme_end));
  if (scheme != "http" && scheme != "https") return std::nullopt;
  auto rest = url.substr(scheme_end + 3);
  auto slash = rest.find('/');
  std::string host = rest.substr(0, slash);
  std::string path = slash == std::string::npos ? "/" : rest.substr(slash);
  if (host.empty()) return std::nullopt;

  httplib::Client cli(scheme + "://" + host);
  auto secs = opts_.timeout_ms / 1000;
  auto usecs = (opts_.timeout_ms % 1000) * 1000;
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_follow_location(true);

  for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
    auto res = cli.Head(path);
    if (!res) continue;
    HeadResponse out;
    out.status = res->status;
    if (res->has_header("Content-Type")) out.content_type = res->get_header_value("Content-Type");
    if (res->status >= 500 && attempt < opts_.retries) continue;
    return out;
  }
  return std::nullopt;
}

}  // namespace supervisor
