#include "app/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "util/error.hpp"

namespace depthforge {

namespace fs = std::filesystem;

namespace {

std::string hex(const unsigned char* p, unsigned n) {
  static const char digits[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < n; ++i) {
    out += digits[p[i] >> 4];
    out += digits[p[i] & 15];
  }
  return out;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string sha1_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr) != 1) throw Error("SHA-1 failed");
  return hex(md, len);
}

std::string git_blob_sha1(const std::string& path) {
  const std::string data = read_all(path);
  std::string obj = "blob " + std::to_string(data.size());
  obj.push_back('\0');
  return sha1_hex(obj + data);
}

RunManifest::RunManifest(std::string command) : command_(std::move(command)) {}

void RunManifest::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : fields_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  fields_.emplace_back(key, value);
}

void RunManifest::add_input(const std::string& label, const std::string& path) {
  Input in{label, path, {}};
  std::error_code ec;
  if (fs::is_directory(path, ec)) {
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      // Manifests carry timestamps; they are bookkeeping, not content.
      if (!e.is_regular_file() || e.path().filename() == "manifest.txt") continue;
      in.files.emplace_back(fs::relative(e.path(), path).generic_string(), git_blob_sha1(e.path().string()));
    }
    std::sort(in.files.begin(), in.files.end());
  } else if (fs::is_regular_file(path, ec)) {
    in.files.emplace_back(fs::path(path).filename().generic_string(), git_blob_sha1(path));
  } else {
    throw IoError("manifest input '" + path + "' does not exist");
  }
  inputs_.push_back(std::move(in));
}

void RunManifest::add_output(const std::string& path) { outputs_.push_back(path); }

std::string RunManifest::body(const std::string& manifest_dir) const {
  std::ostringstream out;
  out << "command = " << command_ << "\n";
  for (const auto& [k, v] : fields_) out << k << " = " << v << "\n";
  for (const Input& in : inputs_) {
    // Tree id over the sorted (path, blob) list.
    std::string listing;
    for (const auto& [rel, id] : in.files) listing += rel + '\0' + id + '\n';
    out << "input." << in.label << " = " << in.path << "\n";
    out << "input." << in.label << ".sha1 = " << sha1_hex(listing) << "\n";
    out << "input." << in.label << ".files = " << in.files.size() << "\n";
  }
  std::vector<std::string> rels;
  for (const std::string& o : outputs_) {
    std::error_code ec;
    fs::path rel = fs::relative(o, manifest_dir, ec);
    if (ec || rel.empty()) rel = o;
    rels.push_back(rel.generic_string());
  }
  std::sort(rels.begin(), rels.end());
  for (const std::string& rel : rels) {
    const fs::path full = fs::path(manifest_dir) / rel;
    const std::string id = fs::is_regular_file(full) ? git_blob_sha1(full.string()) : "missing";
    out << "output." << rel << " = " << id << "\n";
  }
  return out.str();
}

void RunManifest::write(const std::string& path) const {
  const fs::path dir = fs::path(path).parent_path();
  const std::string text = body(dir.empty() ? std::string(".") : dir.string());
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest '" + path + "'");
  out << "created = " << stamp << "\n" << text;
  if (!out) throw IoError("cannot write manifest '" + path + "'");
}

}  // namespace depthforge
