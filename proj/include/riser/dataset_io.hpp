#pragma once

#include <string>
#include <vector>

#include "riser/synth_world.hpp"
#include "riser/tokens.hpp"

namespace riser {

// Catalog file: one item per line, whitespace-separated integer content token
// ids; the terminal token is implicit and appended on load.
void save_catalog(const std::string& path, const ItemCatalog& catalog);
ItemCatalog load_catalog(const std::string& path, int32_t vocab_size,
                         Token terminal = kTerminalToken);

// Split files: one record per line, `user<TAB>t<TAB>h1,h2,...<TAB>target`.
void save_interactions(const std::string& path, const std::vector<Interaction>& recs);
std::vector<Interaction> load_interactions(const std::string& path);

/// FNV-1a over the raw bytes of a file, hex-encoded. Used by run manifests.
std::string file_hash_hex(const std::string& path);

}  // namespace riser
