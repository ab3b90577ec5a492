#include "qsattn/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace qsattn {

static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");

void save_checkpoint(const std::string& stem, const std::vector<CheckpointEntry>& entries) {
  std::ofstream bin(stem + ".bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot open for writing: " + stem + ".bin");
  std::ofstream man(stem + ".manifest", std::ios::trunc);
  if (!man) throw IoError("cannot open for writing: " + stem + ".manifest");

  man << kCheckpointMagic << "\n";
  size_t offset = 0;
  for (const auto& e : entries) {
    if (shape_numel(e.shape) != static_cast<Index>(e.values.size()))
      throw IoError("checkpoint: entry '" + e.name + "' shape/value mismatch");
    man << e.name << " " << e.shape.size();
    for (Index d : e.shape) man << " " << d;
    man << " " << offset << "\n";
    bin.write(reinterpret_cast<const char*>(e.values.data()),
              static_cast<std::streamsize>(e.values.size() * sizeof(float)));
    offset += e.values.size() * sizeof(float);
  }
  if (!bin || !man) throw IoError("checkpoint: write failure for stem " + stem);
}

std::vector<CheckpointEntry> load_checkpoint(const std::string& stem) {
  std::ifstream man(stem + ".manifest");
  if (!man) throw IoError("cannot open: " + stem + ".manifest");
  std::string header;
  if (!std::getline(man, header) || header != kCheckpointMagic)
    throw IoError("checkpoint: bad version header in " + stem + ".manifest (expected " + kCheckpointMagic + ")");

  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot open: " + stem + ".bin");

  std::vector<CheckpointEntry> entries;
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    CheckpointEntry e;
    size_t ndim = 0, offset = 0;
    if (!(is >> e.name >> ndim)) throw IoError("checkpoint: malformed manifest line: " + line);
    e.shape.resize(ndim);
    for (size_t i = 0; i < ndim; ++i)
      if (!(is >> e.shape[i])) throw IoError("checkpoint: malformed manifest line: " + line);
    if (!(is >> offset)) throw IoError("checkpoint: malformed manifest line: " + line);
    e.values.resize(static_cast<size_t>(shape_numel(e.shape)));
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(e.values.size() * sizeof(float)));
    if (!bin) throw IoError("checkpoint: payload truncated for tensor '" + e.name + "' in " + stem + ".bin");
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace qsattn
