#pragma once

#include <string>
#include <utility>
#include <vector>

namespace depthforge {

/// SHA-1 of "blob <size>\0" + contents, as git computes object ids.
std::string git_blob_sha1(const std::string& path);
std::string sha1_hex(const std::string& bytes);

/// Flat `key = value` record of one command run. Input trees are hashed file
/// by file; output paths are stored relative to the manifest's directory so
/// runs into different directories produce the same manifest body.
class RunManifest {
 public:
  explicit RunManifest(std::string command);

  void set(const std::string& key, const std::string& value);
  /// File or directory (recursive). `label` names it in the manifest.
  void add_input(const std::string& label, const std::string& path);
  void add_output(const std::string& path);

  /// Everything except the `created` line.
  std::string body(const std::string& manifest_dir) const;
  /// Writes body plus a UTC timestamp to `path`.
  void write(const std::string& path) const;

 private:
  std::string command_;
  std::vector<std::pair<std::string, std::string>> fields_;
  struct Input {
    std::string label, path;
    std::vector<std::pair<std::string, std::string>> files;  // relative path, blob id
  };
  std::vector<Input> inputs_;
  std::vector<std::string> outputs_;
};

}  // namespace depthforge
