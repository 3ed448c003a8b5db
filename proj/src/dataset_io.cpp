#include "riser/dataset_io.hpp"

#include <fstream>
#include <sstream>

#include "riser/errors.hpp"

namespace riser {

void save_catalog(const std::string& path, const ItemCatalog& catalog) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open catalog for writing: " + path);
  for (const auto& item : catalog.items) {
    for (size_t i = 0; i + 1 < item.tokens.size(); ++i) {
      if (i > 0) out << ' ';
      out << item.tokens[i];
    }
    out << '\n';
  }
  if (!out) throw DataError("short write while saving catalog: " + path);
}

ItemCatalog load_catalog(const std::string& path, int32_t vocab_size, Token terminal) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open catalog: " + path);
  ItemCatalog catalog;
  catalog.vocab_size = vocab_size;
  catalog.terminal = terminal;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    TokenizedItem item;
    std::istringstream ss(line);
    Token t;
    while (ss >> t) {
      if (t < 0 || t >= vocab_size) {
        throw DataError("catalog token out of range at line " + std::to_string(line_no));
      }
      item.tokens.push_back(t);
    }
    item.tokens.push_back(terminal);
    item.validate(terminal);
    catalog.items.push_back(std::move(item));
  }
  if (catalog.items.empty()) throw DataError("catalog file is empty: " + path);
  return catalog;
}

void save_interactions(const std::string& path, const std::vector<Interaction>& recs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open split for writing: " + path);
  for (const auto& r : recs) {
    out << r.user << '\t' << r.timestamp << '\t';
    for (size_t i = 0; i < r.history.size(); ++i) {
      if (i > 0) out << ',';
      out << r.history[i];
    }
    out << '\t' << r.target << '\n';
  }
  if (!out) throw DataError("short write while saving split: " + path);
}

std::vector<Interaction> load_interactions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split: " + path);
  std::vector<Interaction> recs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string user_s, t_s, hist_s, target_s;
    if (!std::getline(ss, user_s, '\t') || !std::getline(ss, t_s, '\t') ||
        !std::getline(ss, hist_s, '\t') || !std::getline(ss, target_s)) {
      throw DataError("malformed split record at line " + std::to_string(line_no));
    }
    Interaction r;
    try {
      r.user = std::stoi(user_s);
      r.timestamp = std::stoll(t_s);
      r.target = std::stoi(target_s);
      std::istringstream hs(hist_s);
      std::string tok;
      while (std::getline(hs, tok, ',')) {
        if (!tok.empty()) r.history.push_back(std::stoi(tok));
      }
    } catch (const std::exception&) {
      throw DataError("malformed split record at line " + std::to_string(line_no));
    }
    if (r.history.empty()) {
      throw DataError("empty history at line " + std::to_string(line_no));
    }
    recs.push_back(std::move(r));
  }
  return recs;
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash missing file: " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const auto n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
    if (!in) break;
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return std::string(hex);
}

}  // namespace riser
