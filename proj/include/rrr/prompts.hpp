#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "rrr/errors.hpp"

namespace rrr {

/// Plain-text prompt template with `{name}` placeholders. Only placeholders
/// present in the variable map are substituted; every other brace is left
/// verbatim, so literal braces in prompt bodies are safe.
class PromptTemplate {
public:
    PromptTemplate() = default;
    explicit PromptTemplate(std::string text) : text_(std::move(text)) {}

    static PromptTemplate from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open prompt template: " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return PromptTemplate(ss.str());
    }

    std::string render(const std::map<std::string, std::string>& vars) const {
        std::string out;
        out.reserve(text_.size());
        size_t pos = 0;
        while (pos < text_.size()) {
            size_t b = text_.find('{', pos);
            if (b == std::string::npos) {
                out.append(text_, pos, std::string::npos);
                break;
            }
            size_t e = text_.find('}', b + 1);
            if (e == std::string::npos) {
                out.append(text_, pos, std::string::npos);
                break;
            }
            auto it = vars.find(text_.substr(b + 1, e - b - 1));
            if (it == vars.end()) {
                out.append(text_, pos, b + 1 - pos);  // keep the brace, rescan after it
                pos = b + 1;
            } else {
                out.append(text_, pos, b - pos);
                out += it->second;
                pos = e + 1;
            }
        }
        return out;
    }

    const std::string& text() const { return text_; }

private:
    std::string text_;
};

}  // namespace rrr
