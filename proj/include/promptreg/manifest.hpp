#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "promptreg/segmenter.hpp"

namespace promptreg {

// ROI manifest shared by the sidecar exchange and the pipeline's ROI
// artifacts:
//   {"rois": [{"id", "prompt", "slice", "box": [x0,y0,(z0),x1,y1,(z1)],
//              "score", "mask": "<file>.t2r.json"}],
//    "embeddings": [{"slice", "file"}]}
// File references are relative to the manifest's directory; "slice" is null
// for whole-image entries.

// Writes masks under `dir/masks`, embeddings under `dir/embeddings` and the
// manifest itself as `dir/<manifest_name>`.
void write_response(const PromptResponse& response,
                    const std::filesystem::path& dir,
                    const std::string& manifest_name = "response.json");

// Throws FormatError on a malformed manifest or referenced file.
PromptResponse read_response(const std::filesystem::path& manifest,
                             ImageTag tag);

}  // namespace promptreg
